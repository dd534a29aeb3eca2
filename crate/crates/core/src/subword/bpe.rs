//! Byte-pair-encoding merges learned over boundary-marked words.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};

use super::{count_words, SubwordError};
use crate::par::{self, Execution};

#[derive(Clone, Debug, PartialEq)]
pub struct BpeModel {
    pub(crate) vocab_size: usize,
    pub(crate) alphabet: Vec<String>,
    pub(crate) merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

impl BpeModel {
    pub fn from_parts(
        vocab_size: usize,
        alphabet: Vec<String>,
        merges: Vec<(String, String)>,
    ) -> Result<Self, SubwordError> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, pair) in merges.iter().enumerate() {
            if ranks.insert(pair.clone(), rank).is_some() {
                return Err(SubwordError::Config(format!(
                    "duplicate merge ({}, {})",
                    pair.0, pair.1
                )));
            }
        }
        Ok(BpeModel {
            vocab_size,
            alphabet,
            merges,
            ranks,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    /// Characters plus every distinct merged piece.
    pub fn vocabulary(&self) -> BTreeSet<String> {
        self.alphabet
            .iter()
            .cloned()
            .chain(self.merges.iter().map(|(l, r)| format!("{l}{r}")))
            .collect()
    }

    /// Segments one boundary-marked word by replaying merges in rank order.
    pub fn encode_word(&self, word: &str) -> Vec<String> {
        let mut symbols: Vec<String> = word.chars().map(String::from).collect();
        let mut key = (String::new(), String::new());
        loop {
            let mut best: Option<(usize, usize)> = None;
            for i in 0..symbols.len().saturating_sub(1) {
                key.0.clone_from(&symbols[i]);
                key.1.clone_from(&symbols[i + 1]);
                if let Some(&rank) = self.ranks.get(&key) {
                    if best.is_none_or(|(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
            }
            let Some((rank, first)) = best else {
                return symbols;
            };
            let (left, right) = &self.merges[rank];
            let mut merged = Vec::with_capacity(symbols.len());
            merged.extend(symbols.drain(..first));
            let mut rest = symbols.into_iter().peekable();
            while let Some(sym) = rest.next() {
                if &sym == left && rest.peek() == Some(right) {
                    let r = rest.next().unwrap();
                    merged.push(sym + &r);
                } else {
                    merged.push(sym);
                }
            }
            symbols = merged;
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Pair(u32, u32);

struct Trainer {
    pieces: Vec<String>,
    ids: HashMap<String, u32>,
    words: Vec<(Vec<u32>, i64)>,
    counts: HashMap<Pair, i64>,
    locations: HashMap<Pair, HashSet<usize>>,
}

impl Trainer {
    fn intern(&mut self, piece: String) -> (u32, bool) {
        if let Some(&id) = self.ids.get(&piece) {
            return (id, false);
        }
        let id = self.pieces.len() as u32;
        self.ids.insert(piece.clone(), id);
        self.pieces.push(piece);
        (id, true)
    }

    fn entry(&self, pair: Pair) -> (i64, Reverse<(String, String)>, Pair) {
        (
            self.counts.get(&pair).copied().unwrap_or(0),
            Reverse((
                self.pieces[pair.0 as usize].clone(),
                self.pieces[pair.1 as usize].clone(),
            )),
            pair,
        )
    }
}

fn pairs_of(word: &[u32]) -> impl Iterator<Item = Pair> + '_ {
    word.windows(2).map(|w| Pair(w[0], w[1]))
}

/// Learns merges from a weighted word table. Words must not contain spaces;
/// each gets a leading boundary marker.
pub fn train_from_counts<'a>(
    word_counts: impl IntoIterator<Item = (&'a str, u64)>,
    vocab_size: usize,
    exec: Execution,
) -> Result<BpeModel, SubwordError> {
    let mut table: Vec<(String, i64)> = word_counts
        .into_iter()
        .filter(|(w, c)| !w.is_empty() && *c > 0)
        .map(|(w, c)| (format!("{}{w}", super::WORD_BOUNDARY), c as i64))
        .collect();
    table.sort();
    train_marked(table, vocab_size, exec)
}

pub(crate) fn train(lines: &[&str], vocab_size: usize, exec: Execution) -> Result<BpeModel, SubwordError> {
    let mut table: Vec<(String, i64)> = count_words(lines, exec)
        .into_iter()
        .map(|(w, c)| (w, c as i64))
        .collect();
    table.sort();
    train_marked(table, vocab_size, exec)
}

fn train_marked(table: Vec<(String, i64)>, vocab_size: usize, exec: Execution) -> Result<BpeModel, SubwordError> {
    let alphabet: BTreeSet<char> = table.iter().flat_map(|(w, _)| w.chars()).collect();
    if vocab_size <= alphabet.len() {
        return Err(SubwordError::Config(format!(
            "vocab size {vocab_size} must exceed the {} distinct training characters",
            alphabet.len()
        )));
    }
    let mut t = Trainer {
        pieces: Vec::new(),
        ids: HashMap::new(),
        words: Vec::with_capacity(table.len()),
        counts: HashMap::new(),
        locations: HashMap::new(),
    };
    for c in &alphabet {
        t.intern(c.to_string());
    }
    for (word, count) in &table {
        let ids = word.chars().map(|c| t.ids[c.to_string().as_str()]).collect();
        t.words.push((ids, *count));
    }

    let partials = par::map_chunks(&t.words, 4096, exec, |chunk| {
        let mut counts: HashMap<Pair, i64> = HashMap::new();
        for (ids, c) in chunk {
            for p in pairs_of(ids) {
                *counts.entry(p).or_default() += c;
            }
        }
        counts
    });
    for part in partials {
        for (p, c) in part {
            *t.counts.entry(p).or_default() += c;
        }
    }
    for (i, (ids, _)) in t.words.iter().enumerate() {
        for p in pairs_of(ids) {
            t.locations.entry(p).or_default().insert(i);
        }
    }

    let mut heap: BinaryHeap<_> = t.counts.keys().map(|&p| t.entry(p)).collect();
    let mut merges = Vec::new();
    let mut seen_merges = HashSet::new();
    let mut vocab = alphabet.len();

    while vocab < vocab_size {
        let Some((count, _, pair)) = heap.pop() else { break };
        let current = t.counts.get(&pair).copied().unwrap_or(0);
        if current != count {
            continue;
        }
        if count <= 0 {
            break;
        }
        let left = t.pieces[pair.0 as usize].clone();
        let right = t.pieces[pair.1 as usize].clone();
        let (new_id, fresh) = t.intern(format!("{left}{right}"));
        if fresh {
            vocab += 1;
        }
        seen_merges.insert(pair);
        merges.push((left, right));

        let mut touched: HashSet<Pair> = HashSet::new();
        let mut sites: Vec<usize> = t.locations.remove(&pair).unwrap_or_default().into_iter().collect();
        sites.sort_unstable();
        for wi in sites {
            let (old, wc) = std::mem::take(&mut t.words[wi]);
            for p in pairs_of(&old) {
                *t.counts.get_mut(&p).unwrap() -= wc;
                touched.insert(p);
            }
            let mut new = Vec::with_capacity(old.len());
            let mut i = 0;
            while i < old.len() {
                if i + 1 < old.len() && Pair(old[i], old[i + 1]) == pair {
                    new.push(new_id);
                    i += 2;
                } else {
                    new.push(old[i]);
                    i += 1;
                }
            }
            for p in pairs_of(&new) {
                *t.counts.entry(p).or_default() += wc;
                t.locations.entry(p).or_default().insert(wi);
                touched.insert(p);
            }
            t.words[wi] = (new, wc);
        }
        for p in touched {
            if seen_merges.contains(&p) {
                t.counts.remove(&p);
                continue;
            }
            if t.counts.get(&p).copied().unwrap_or(0) > 0 {
                heap.push(t.entry(p));
            } else {
                t.counts.remove(&p);
                t.locations.remove(&p);
            }
        }
    }

    BpeModel::from_parts(
        vocab_size,
        alphabet.into_iter().map(String::from).collect(),
        merges,
    )
}
