use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const DEFAULT_BETA: f64 = 3.0;
pub const DEFAULT_MAX_NGRAM: usize = 6;

/// Character n-gram match statistics for orders 1..=max, whitespace removed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChrfStats {
    pub matches: Vec<u64>,
    pub hyp_totals: Vec<u64>,
    pub ref_totals: Vec<u64>,
}

impl ChrfStats {
    pub fn zero(max_ngram: usize) -> Self {
        ChrfStats {
            matches: vec![0; max_ngram],
            hyp_totals: vec![0; max_ngram],
            ref_totals: vec![0; max_ngram],
        }
    }

    pub fn from_texts(hyp: &str, reference: &str, max_ngram: usize) -> Self {
        let h: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
        let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
        let mut stats = Self::zero(max_ngram);
        for n in 1..=max_ngram {
            let hc = char_ngrams(&h, n);
            let rc = char_ngrams(&r, n);
            stats.hyp_totals[n - 1] = hc.values().sum();
            stats.ref_totals[n - 1] = rc.values().sum();
            stats.matches[n - 1] = hc
                .iter()
                .map(|(g, c)| (*c).min(rc.get(g).copied().unwrap_or(0)))
                .sum();
        }
        stats
    }

    pub fn merge(mut self, other: &ChrfStats) -> Self {
        for n in 0..self.matches.len() {
            self.matches[n] += other.matches[n];
            self.hyp_totals[n] += other.hyp_totals[n];
            self.ref_totals[n] += other.ref_totals[n];
        }
        self
    }

    /// Precision and recall are averaged uniformly over the orders where
    /// their denominator is non-zero, then combined by F-beta.
    pub fn report(&self, beta: f64) -> ChrfReport {
        let mean = |num: &[u64], den: &[u64]| {
            let defined: Vec<f64> = num
                .iter()
                .zip(den)
                .filter(|(_, d)| **d > 0)
                .map(|(n, d)| *n as f64 / *d as f64)
                .collect();
            if defined.is_empty() {
                0.0
            } else {
                defined.iter().sum::<f64>() / defined.len() as f64
            }
        };
        let precision = mean(&self.matches, &self.hyp_totals);
        let recall = mean(&self.matches, &self.ref_totals);
        ChrfReport {
            score: f_beta(precision, recall, beta),
            beta,
            max_ngram: self.matches.len(),
            char_precision: precision,
            char_recall: recall,
        }
    }
}

pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if precision + recall <= 0.0 || denom <= 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

fn char_ngrams(chars: &[char], n: usize) -> HashMap<&[char], u64> {
    let mut counts = HashMap::new();
    if chars.len() >= n {
        for w in chars.windows(n) {
            *counts.entry(w).or_default() += 1;
        }
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChrfReport {
    pub score: f64,
    pub beta: f64,
    pub max_ngram: usize,
    pub char_precision: f64,
    pub char_recall: f64,
}
