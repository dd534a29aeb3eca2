//! Translation edit rate: word-level Levenshtein distance plus greedy block
//! shifts.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Longest block considered for a shift.
pub const MAX_SHIFT_LEN: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerEdits {
    pub insertions: u64,
    pub deletions: u64,
    pub substitutions: u64,
    pub shifts: u64,
}

impl TerEdits {
    pub fn total(&self) -> u64 {
        self.insertions + self.deletions + self.substitutions + self.shifts
    }

    pub fn merge(mut self, other: &TerEdits) -> Self {
        self.insertions += other.insertions;
        self.deletions += other.deletions;
        self.substitutions += other.substitutions;
        self.shifts += other.shifts;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerReport {
    pub score: f64,
    pub edits: TerEdits,
    pub reference_length: u64,
}

/// Maps tokens of one pair onto dense ids so the inner loops compare integers.
pub(crate) fn intern_pair<T: AsRef<str>>(hyp: &[T], reference: &[T]) -> (Vec<u32>, Vec<u32>) {
    fn lookup<'a, T: AsRef<str>>(ids: &mut HashMap<&'a str, u32>, tokens: &'a [T]) -> Vec<u32> {
        tokens
            .iter()
            .map(|t| {
                let next = ids.len() as u32;
                *ids.entry(t.as_ref()).or_insert(next)
            })
            .collect()
    }
    let mut ids = HashMap::new();
    let r = lookup(&mut ids, reference);
    let h = lookup(&mut ids, hyp);
    (h, r)
}

/// Plain word edit distance (unit-cost insert, delete, substitute).
pub(crate) fn edit_distance(hyp: &[u32], reference: &[u32], row: &mut Vec<usize>) -> usize {
    row.clear();
    row.extend(0..=reference.len());
    for (i, h) in hyp.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, r) in reference.iter().enumerate() {
            let up = row[j + 1];
            let cost = if h == r { diag } else { diag + 1 };
            row[j + 1] = cost.min(up + 1).min(row[j] + 1);
            diag = up;
        }
    }
    row[reference.len()]
}

/// Edit-operation breakdown of an optimal alignment.
fn edit_breakdown(hyp: &[u32], reference: &[u32]) -> TerEdits {
    let (n, m) = (hyp.len(), reference.len());
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in dp[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[i - 1][j - 1] + usize::from(hyp[i - 1] != reference[j - 1]);
            dp[i][j] = sub.min(dp[i - 1][j] + 1).min(dp[i][j - 1] + 1);
        }
    }
    let mut edits = TerEdits::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && dp[i][j] == dp[i - 1][j - 1] + usize::from(hyp[i - 1] != reference[j - 1]) {
            if hyp[i - 1] != reference[j - 1] {
                edits.substitutions += 1;
            }
            i -= 1;
            j -= 1;
        } else if i > 0 && dp[i][j] == dp[i - 1][j] + 1 {
            edits.deletions += 1;
            i -= 1;
        } else {
            edits.insertions += 1;
            j -= 1;
        }
    }
    edits
}

fn occurs_in(block: &[u32], reference: &[u32]) -> bool {
    reference.windows(block.len()).any(|w| w == block)
}

/// Returns `words` with `words[start..start + len]` moved so it begins at
/// index `dest` of the result.
pub(crate) fn apply_shift(words: &[u32], start: usize, len: usize, dest: usize) -> Vec<u32> {
    let block = &words[start..start + len];
    let mut rest: Vec<u32> = Vec::with_capacity(words.len());
    rest.extend_from_slice(&words[..start]);
    rest.extend_from_slice(&words[start + len..]);
    let mut out = Vec::with_capacity(words.len());
    out.extend_from_slice(&rest[..dest]);
    out.extend_from_slice(block);
    out.extend_from_slice(&rest[dest..]);
    out
}

/// Greedy shift search followed by an edit-distance alignment. Each round
/// applies the single shift that lowers the edit distance the most; the moved
/// block must occur verbatim in the reference.
pub(crate) fn ter_edits(hyp: &[u32], reference: &[u32]) -> TerEdits {
    let mut current = hyp.to_vec();
    let mut row = Vec::new();
    let mut distance = edit_distance(&current, reference, &mut row);
    let mut shifts = 0;
    while distance > 0 {
        let n = current.len();
        let mut best: Option<(usize, Vec<u32>)> = None;
        for start in 0..n {
            for len in 1..=MAX_SHIFT_LEN.min(n - start) {
                if !occurs_in(&current[start..start + len], reference) {
                    // longer blocks from this start cannot occur either
                    break;
                }
                for dest in 0..=n - len {
                    if dest == start {
                        continue;
                    }
                    let candidate = apply_shift(&current, start, len, dest);
                    let d = edit_distance(&candidate, reference, &mut row);
                    if d < best.as_ref().map_or(distance, |(bd, _)| *bd) {
                        best = Some((d, candidate));
                    }
                }
            }
        }
        match best {
            Some((d, shifted)) => {
                current = shifted;
                distance = d;
                shifts += 1;
            }
            None => break,
        }
    }
    let mut edits = edit_breakdown(&current, reference);
    edits.shifts = shifts;
    edits
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(s: &str) -> Vec<u32> {
        s.bytes().map(u32::from).collect()
    }

    #[test]
    fn swap_is_one_shift() {
        let e = ter_edits(&ids("ba"), &ids("ab"));
        assert_eq!(e, TerEdits { shifts: 1, ..Default::default() });
    }

    #[test]
    fn substitution_only() {
        let e = ter_edits(&ids("axc"), &ids("abc"));
        assert_eq!(e, TerEdits { substitutions: 1, ..Default::default() });
    }

    #[test]
    fn breakdown_counts() {
        let e = edit_breakdown(&ids("abcd"), &ids("abd"));
        assert_eq!(e.deletions, 1);
        let e = edit_breakdown(&ids(""), &ids("abc"));
        assert_eq!(e.insertions, 3);
    }

    #[test]
    fn shift_moves_block() {
        assert_eq!(apply_shift(&[1, 2, 3, 4], 0, 2, 2), vec![3, 4, 1, 2]);
        assert_eq!(apply_shift(&[1, 2, 3, 4], 3, 1, 0), vec![4, 1, 2, 3]);
    }
}
