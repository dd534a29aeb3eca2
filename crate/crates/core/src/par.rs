//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper returns results in input order, so callers that reduce the
//! output sequentially get the same answer regardless of thread count. With
//! the `parallel` feature disabled, [`Execution::Parallel`] silently runs on
//! the calling thread.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How batch work is scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// True when work will actually be spread over a thread pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(items: &[T], exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Maps `f` over fixed-size chunks of `items`, preserving chunk order.
///
/// Chunk boundaries depend only on `chunk_len`, never on the pool, which
/// keeps floating-point partial sums reproducible.
pub fn map_chunks<T, R, F>(items: &[T], chunk_len: usize, exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync + Send,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_chunks(chunk_len).map(f).collect();
    }
    let _ = exec;
    items.chunks(chunk_len).map(f).collect()
}

/// Maps `f` over the index range `0..len`, preserving order.
pub fn map_range<R, F>(len: usize, exec: Execution, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..len).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..len).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let xs: Vec<u32> = (0..1000).collect();
        for exec in [Execution::Sequential, Execution::Parallel] {
            assert_eq!(map(&xs, exec, |x| x * 2), xs.iter().map(|x| x * 2).collect::<Vec<_>>());
            let sums = map_chunks(&xs, 7, exec, |c| c.iter().sum::<u32>());
            assert_eq!(sums.len(), 143);
            assert_eq!(sums.iter().sum::<u32>(), xs.iter().sum::<u32>());
            assert_eq!(map_range(5, exec, |i| i), vec![0, 1, 2, 3, 4]);
        }
    }
}
