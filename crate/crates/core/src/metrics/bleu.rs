use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    #[default]
    None,
    /// Orders n >= 2 with zero matches use (0 + 1) / (total + 1).
    AddOneForNGe2,
}

/// Clipped n-gram sufficient statistics. Summing these over sentences gives
/// the corpus statistic, independent of summation order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub hypothesis_length: u64,
    pub reference_length: u64,
}

impl BleuStats {
    pub fn from_tokens<T: AsRef<str>>(hyp: &[T], reference: &[T]) -> Self {
        let mut stats = BleuStats {
            hypothesis_length: hyp.len() as u64,
            reference_length: reference.len() as u64,
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(reference, n);
            let hyp_counts = ngram_counts(hyp, n);
            stats.totals[n - 1] = hyp.len().saturating_sub(n - 1) as u64;
            stats.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, c)| (*c).min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
        }
        stats
    }

    pub fn merge(mut self, other: &BleuStats) -> Self {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hypothesis_length += other.hypothesis_length;
        self.reference_length += other.reference_length;
        self
    }

    pub fn report(&self, smoothing: Smoothing) -> BleuReport {
        let precisions: [f64; MAX_ORDER] = std::array::from_fn(|n| {
            let (m, t) = (self.matches[n], self.totals[n]);
            match smoothing {
                Smoothing::AddOneForNGe2 if n >= 1 && m == 0 => 1.0 / (t as f64 + 1.0),
                _ if t == 0 => 0.0,
                _ => m as f64 / t as f64,
            }
        });
        let (c, r) = (self.hypothesis_length as f64, self.reference_length as f64);
        let brevity_penalty = if self.hypothesis_length == 0 {
            0.0
        } else if c >= r {
            1.0
        } else {
            (1.0 - r / c).exp()
        };
        let score = if precisions.contains(&0.0) {
            0.0
        } else {
            let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
            100.0 * brevity_penalty * mean_log.exp()
        };
        BleuReport {
            score,
            ngram_precisions: precisions,
            brevity_penalty,
            hypothesis_length: self.hypothesis_length,
            reference_length: self.reference_length,
            smoothing,
        }
    }
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_default() += 1;
        }
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub score: f64,
    pub ngram_precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hypothesis_length: u64,
    pub reference_length: u64,
    pub smoothing: Smoothing,
}
