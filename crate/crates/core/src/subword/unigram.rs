//! Unigram language-model segmentation: EM over the segmentation lattice
//! with loss-based vocabulary pruning, and Viterbi decoding.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{count_words, SubwordError};
use crate::par::{self, Execution};

/// Training knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnigramConfig {
    pub vocab_size: usize,
    pub seed_vocab_size: usize,
    pub shrink_factor: f64,
    pub em_iterations: usize,
    pub max_piece_len: usize,
}

impl UnigramConfig {
    pub fn new(vocab_size: usize) -> Self {
        UnigramConfig {
            vocab_size,
            seed_vocab_size: vocab_size * 10,
            shrink_factor: 0.75,
            em_iterations: 2,
            max_piece_len: 8,
        }
    }

    fn validate(&self) -> Result<(), SubwordError> {
        if self.seed_vocab_size <= self.vocab_size {
            return Err(SubwordError::Config(format!(
                "seed vocab size {} must exceed vocab size {}",
                self.seed_vocab_size, self.vocab_size
            )));
        }
        if !(self.shrink_factor > 0.0 && self.shrink_factor < 1.0) {
            return Err(SubwordError::Config(format!(
                "shrink factor {} outside (0, 1)",
                self.shrink_factor
            )));
        }
        if self.em_iterations == 0 || self.max_piece_len == 0 {
            return Err(SubwordError::Config(
                "em iterations and max piece length must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnigramModel {
    pub(crate) vocab_size: usize,
    pieces: Vec<(String, f64)>,
    index: HashMap<String, usize>,
    max_len: usize,
}

impl UnigramModel {
    /// Builds a model from `(piece, log_prob)` entries. Entries with a
    /// log-probability of negative infinity are dropped.
    pub fn from_pieces(vocab_size: usize, pieces: Vec<(String, f64)>) -> Result<Self, SubwordError> {
        let mut index = HashMap::with_capacity(pieces.len());
        let mut kept = Vec::with_capacity(pieces.len());
        for (piece, lp) in pieces {
            if piece.is_empty() {
                return Err(SubwordError::Config("empty piece".into()));
            }
            if lp.is_nan() || lp > 0.0 {
                return Err(SubwordError::Config(format!("invalid log-prob {lp} for {piece:?}")));
            }
            if lp == f64::NEG_INFINITY {
                continue;
            }
            if index.insert(piece.clone(), kept.len()).is_some() {
                return Err(SubwordError::Config(format!("duplicate piece {piece:?}")));
            }
            kept.push((piece, lp));
        }
        let max_len = kept.iter().map(|(p, _)| p.chars().count()).max().unwrap_or(0);
        Ok(UnigramModel {
            vocab_size,
            pieces: kept,
            index,
            max_len,
        })
    }

    /// Convenience constructor from plain probabilities.
    pub fn from_probabilities(pieces: &[(&str, f64)]) -> Result<Self, SubwordError> {
        let entries = pieces.iter().map(|(p, prob)| (p.to_string(), prob.ln())).collect::<Vec<_>>();
        Self::from_pieces(entries.len(), entries)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn pieces(&self) -> &[(String, f64)] {
        &self.pieces
    }

    pub fn log_prob(&self, piece: &str) -> Option<f64> {
        self.index.get(piece).map(|&i| self.pieces[i].1)
    }

    pub fn vocabulary(&self) -> BTreeSet<String> {
        self.pieces.iter().map(|(p, _)| p.clone()).collect()
    }

    /// Maximum-likelihood segmentation of one word. Exact score ties go to
    /// the lexicographically smallest piece sequence.
    pub fn encode_word(&self, word: &str) -> Result<Vec<String>, SubwordError> {
        let lattice = Lattice::new(word);
        match viterbi(&lattice, self.max_len, |s| self.index.get(s).map(|&i| self.pieces[i].1)) {
            Some(seg) => Ok(seg.into_iter().map(String::from).collect()),
            None => {
                let missing = word
                    .chars()
                    .find(|c| !self.index.contains_key(c.to_string().as_str()))
                    .unwrap_or('?');
                Err(SubwordError::Coverage(missing))
            }
        }
    }
}

/// Character boundaries of one word.
struct Lattice<'a> {
    text: &'a str,
    offsets: Vec<usize>,
}

impl<'a> Lattice<'a> {
    fn new(text: &'a str) -> Self {
        let mut offsets: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
        offsets.push(text.len());
        Lattice { text, offsets }
    }

    fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    fn slice(&self, start: usize, end: usize) -> &'a str {
        &self.text[self.offsets[start]..self.offsets[end]]
    }
}

fn viterbi<'a>(
    lattice: &Lattice<'a>,
    max_len: usize,
    score: impl Fn(&str) -> Option<f64>,
) -> Option<Vec<&'a str>> {
    let n = lattice.len();
    if n == 0 {
        return Some(Vec::new());
    }
    let mut best: Vec<Option<(f64, usize)>> = vec![None; n + 1];
    best[0] = Some((0.0, 0));
    let backtrack = |best: &[Option<(f64, usize)>], mut end: usize| {
        let mut seg = Vec::new();
        while end > 0 {
            let start = best[end].unwrap().1;
            seg.push(lattice.slice(start, end));
            end = start;
        }
        seg.reverse();
        seg
    };
    for end in 1..=n {
        for start in end.saturating_sub(max_len)..end {
            let Some((prefix, _)) = best[start] else { continue };
            let Some(lp) = score(lattice.slice(start, end)) else { continue };
            let candidate = prefix + lp;
            let better = match best[end] {
                None => true,
                Some((cur, cur_start)) => match candidate.partial_cmp(&cur) {
                    Some(Ordering::Greater) => true,
                    Some(Ordering::Equal) => {
                        let mut a = backtrack(&best, start);
                        a.push(lattice.slice(start, end));
                        let mut b = backtrack(&best, cur_start);
                        b.push(lattice.slice(cur_start, end));
                        a < b
                    }
                    _ => false,
                },
            };
            if better {
                best[end] = Some((candidate, start));
            }
        }
    }
    best[n]?;
    Some(backtrack(&best, n))
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Mutable training state: a vocabulary with log-probabilities.
struct Vocab {
    pieces: Vec<String>,
    log_probs: Vec<f64>,
    index: HashMap<String, usize>,
    is_char: Vec<bool>,
    max_len: usize,
}

impl Vocab {
    fn new(entries: Vec<(String, f64)>) -> Self {
        let mut v = Vocab {
            pieces: Vec::new(),
            log_probs: Vec::new(),
            index: HashMap::new(),
            is_char: Vec::new(),
            max_len: 0,
        };
        for (p, lp) in entries {
            v.index.insert(p.clone(), v.pieces.len());
            v.is_char.push(p.chars().count() == 1);
            v.max_len = v.max_len.max(p.chars().count());
            v.pieces.push(p);
            v.log_probs.push(lp);
        }
        v
    }

    fn lookup(&self, s: &str) -> Option<usize> {
        self.index.get(s).copied().filter(|&i| self.log_probs[i] > f64::NEG_INFINITY)
    }

    fn len(&self) -> usize {
        self.pieces.len()
    }
}

/// Expected piece counts and log-likelihood contribution of one word.
fn forward_backward(vocab: &Vocab, word: &str, weight: f64, counts: &mut [f64]) -> f64 {
    let lattice = Lattice::new(word);
    let n = lattice.len();
    let mut edges: Vec<(usize, usize, usize)> = Vec::new();
    for end in 1..=n {
        for start in end.saturating_sub(vocab.max_len)..end {
            if let Some(id) = vocab.lookup(lattice.slice(start, end)) {
                edges.push((start, end, id));
            }
        }
    }
    let mut alpha = vec![f64::NEG_INFINITY; n + 1];
    alpha[0] = 0.0;
    for &(s, e, id) in &edges {
        alpha[e] = log_add(alpha[e], alpha[s] + vocab.log_probs[id]);
    }
    let mut beta = vec![f64::NEG_INFINITY; n + 1];
    beta[n] = 0.0;
    for &(s, e, id) in edges.iter().rev() {
        beta[s] = log_add(beta[s], beta[e] + vocab.log_probs[id]);
    }
    let z = alpha[n];
    for &(s, e, id) in &edges {
        let posterior = (alpha[s] + vocab.log_probs[id] + beta[e] - z).exp();
        counts[id] += weight * posterior;
    }
    weight * z
}

/// One E-step over the weighted word table. Returns expected counts and the
/// corpus log-likelihood under the current probabilities.
fn expectation(vocab: &Vocab, words: &[(String, f64)], exec: Execution) -> (Vec<f64>, f64) {
    let partials = par::map_chunks(words, 512, exec, |chunk| {
        let mut counts = vec![0.0; vocab.len()];
        let mut ll = 0.0;
        for (w, c) in chunk {
            ll += forward_backward(vocab, w, *c, &mut counts);
        }
        (counts, ll)
    });
    let mut counts = vec![0.0; vocab.len()];
    let mut ll = 0.0;
    for (part, l) in partials {
        for (acc, x) in counts.iter_mut().zip(part) {
            *acc += x;
        }
        ll += l;
    }
    (counts, ll)
}

fn maximization(vocab: &mut Vocab, counts: &[f64]) {
    let total: f64 = counts.iter().sum();
    for (lp, &c) in vocab.log_probs.iter_mut().zip(counts) {
        *lp = if c > 0.0 { (c / total).ln() } else { f64::NEG_INFINITY };
    }
}

/// Runs `iterations` EM steps on a fixed vocabulary, returning the
/// log-likelihood measured at each E-step.
fn run_em(vocab: &mut Vocab, words: &[(String, f64)], iterations: usize, exec: Execution) -> Vec<f64> {
    let mut trace = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let (counts, ll) = expectation(vocab, words, exec);
        trace.push(ll);
        maximization(vocab, &counts);
    }
    trace
}

fn drop_dead(vocab: Vocab) -> Vocab {
    let entries = vocab
        .pieces
        .into_iter()
        .zip(vocab.log_probs)
        .zip(vocab.is_char)
        .filter(|((_, lp), is_char)| *is_char || *lp > f64::NEG_INFINITY)
        .map(|(e, _)| e)
        .collect();
    Vocab::new(entries)
}

fn seed_vocab(words: &[(String, f64)], config: &UnigramConfig) -> Vec<(String, f64)> {
    let mut chars: HashMap<char, f64> = HashMap::new();
    let mut subs: HashMap<&str, f64> = HashMap::new();
    for (w, c) in words {
        let lattice = Lattice::new(w);
        let n = lattice.len();
        for start in 0..n {
            for end in start + 1..=n.min(start + config.max_piece_len) {
                if end - start == 1 {
                    *chars.entry(w[lattice.offsets[start]..].chars().next().unwrap()).or_default() += c;
                } else {
                    *subs.entry(lattice.slice(start, end)).or_default() += c;
                }
            }
        }
    }
    let mut ranked: Vec<(&str, f64)> = subs.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let room = config.seed_vocab_size.saturating_sub(chars.len());
    ranked.truncate(room);

    let mut entries: Vec<(String, f64)> = chars.into_iter().map(|(ch, f)| (ch.to_string(), f)).collect();
    entries.extend(ranked.into_iter().map(|(s, f)| (s.to_string(), f)));
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    let total: f64 = entries.iter().map(|(_, f)| f).sum();
    entries.into_iter().map(|(p, f)| (p, (f / total).ln())).collect()
}

/// Removes the pieces whose loss of likelihood would be smallest, keeping
/// every single character, until `target` pieces remain.
fn prune(vocab: &Vocab, words: &[(String, f64)], target: usize, exec: Execution) -> Vocab {
    let segs = par::map(words, exec, |(w, _)| {
        let lattice = Lattice::new(w);
        viterbi(&lattice, vocab.max_len, |s| vocab.lookup(s).map(|i| vocab.log_probs[i]))
            .unwrap_or_default()
            .into_iter()
            .map(|p| vocab.index[p])
            .collect::<Vec<_>>()
    });
    let mut freq = vec![0.0; vocab.len()];
    let mut containing = vec![0.0; vocab.len()];
    for (seg, (_, c)) in segs.iter().zip(words) {
        let mut seen: Vec<usize> = Vec::new();
        for &id in seg {
            freq[id] += c;
            if !seen.contains(&id) {
                seen.push(id);
                containing[id] += c;
            }
        }
    }
    let total: f64 = freq.iter().sum();
    let word_total: f64 = words.iter().map(|(_, c)| c).sum();

    let losses = par::map_range(vocab.len(), exec, |i| {
        if vocab.is_char[i] {
            return f64::INFINITY;
        }
        if freq[i] == 0.0 {
            return 0.0;
        }
        let lattice = Lattice::new(&vocab.pieces[i]);
        let alt = viterbi(&lattice, vocab.max_len, |s| {
            vocab.lookup(s).filter(|&j| j != i).map(|j| vocab.log_probs[j])
        });
        let Some(alt) = alt else { return f64::INFINITY };
        let alt_ids: Vec<usize> = alt.iter().map(|p| vocab.index[*p]).collect();
        let logprob_piece = freq[i].ln() - total.ln();
        let logsum_alt = (total + freq[i] * (alt_ids.len() as f64 - 1.0)).ln();
        let logprob_alt: f64 = alt_ids.iter().map(|&j| (freq[j] + freq[i]).ln() - logsum_alt).sum();
        let loss = (containing[i] / word_total) * (logprob_piece - logprob_alt);
        if loss.is_nan() {
            0.0
        } else {
            loss
        }
    });

    let mut order: Vec<usize> = (0..vocab.len()).collect();
    order.sort_by(|&a, &b| {
        losses[b]
            .total_cmp(&losses[a])
            .then_with(|| vocab.pieces[a].cmp(&vocab.pieces[b]))
    });
    let chars = vocab.is_char.iter().filter(|c| **c).count();
    let keep_pieces = target.saturating_sub(chars);
    let mut kept = 0;
    let mut entries = Vec::with_capacity(target);
    for i in order {
        if vocab.is_char[i] {
            entries.push((vocab.pieces[i].clone(), vocab.log_probs[i]));
        } else if kept < keep_pieces {
            kept += 1;
            entries.push((vocab.pieces[i].clone(), vocab.log_probs[i]));
        }
    }
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    Vocab::new(entries)
}

/// Result of unigram training, including the EM log-likelihood trace of
/// every round (one inner vector per fixed vocabulary).
#[derive(Clone, Debug)]
pub struct UnigramTraining {
    pub model: UnigramModel,
    pub em_trace: Vec<Vec<f64>>,
}

pub(crate) fn train(lines: &[&str], config: &UnigramConfig, exec: Execution) -> Result<UnigramTraining, SubwordError> {
    config.validate()?;
    let mut words: Vec<(String, f64)> = count_words(lines, exec)
        .into_iter()
        .map(|(w, c)| (w, c as f64))
        .collect();
    words.sort_by(|a, b| a.0.cmp(&b.0));
    let alphabet: BTreeSet<char> = words.iter().flat_map(|(w, _)| w.chars()).collect();
    if config.vocab_size <= alphabet.len() {
        return Err(SubwordError::Config(format!(
            "vocab size {} must exceed the {} distinct training characters",
            config.vocab_size,
            alphabet.len()
        )));
    }

    let mut vocab = Vocab::new(seed_vocab(&words, config));
    let mut em_trace = Vec::new();
    loop {
        em_trace.push(run_em(&mut vocab, &words, config.em_iterations, exec));
        vocab = drop_dead(vocab);
        if vocab.len() <= config.vocab_size {
            break;
        }
        let shrunk = (vocab.len() as f64 * config.shrink_factor) as usize;
        let target = shrunk.max(config.vocab_size);
        vocab = prune(&vocab, &words, target, exec);
    }

    // characters whose expected count underflowed still need a probability
    let floor = vocab
        .log_probs
        .iter()
        .copied()
        .filter(|lp| lp.is_finite())
        .fold(0.0_f64, f64::min)
        - 10.0;
    let mut entries: Vec<(String, f64)> = vocab
        .pieces
        .into_iter()
        .zip(vocab.log_probs)
        .map(|(p, lp)| if lp.is_finite() { (p, lp) } else { (p, floor) })
        .collect();
    let norm = entries.iter().map(|(_, lp)| *lp).fold(f64::NEG_INFINITY, log_add);
    for e in &mut entries {
        e.1 = (e.1 - norm).min(0.0);
    }
    let model = UnigramModel::from_pieces(config.vocab_size, entries)?;
    Ok(UnigramTraining { model, em_trace })
}

/// Corpus log-likelihood trace of `iterations` EM steps started from
/// `model`, without pruning.
pub fn em_log_likelihoods(
    model: &UnigramModel,
    lines: &[&str],
    iterations: usize,
    exec: Execution,
) -> Vec<f64> {
    let mut words: Vec<(String, f64)> = count_words(lines, exec)
        .into_iter()
        .map(|(w, c)| (w, c as f64))
        .collect();
    words.sort_by(|a, b| a.0.cmp(&b.0));
    let mut vocab = Vocab::new(model.pieces.clone());
    run_em(&mut vocab, &words, iterations, exec)
}
