//! Shared-vocabulary subword models (BPE and unigram LM) trained directly on
//! raw sentences.
//!
//! Spaces become a reserved boundary marker (`▁`, U+2581) that starts every
//! word, so decoding is a plain concatenation and no pre-tokenizer is needed.
//!
//! Model files are line oriented: a header `kind vocab_size version`, then
//! for BPE one alphabet character per line (single field) followed by one
//! `left<TAB>right` merge per line, and for unigram one `piece<TAB>logprob`
//! per line. Tabs, newlines and backslashes inside pieces are escaped.

mod bpe;
mod unigram;

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::par::{self, Execution};

pub use bpe::{train_from_counts as bpe_train_from_counts, BpeModel};
pub use unigram::{em_log_likelihoods, UnigramConfig, UnigramModel, UnigramTraining};

pub const WORD_BOUNDARY: char = '\u{2581}';
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SubwordError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("expected a {expected} model, got {found}")]
    Kind { expected: ModelKind, found: ModelKind },
    #[error("character {0:?} is not covered by the vocabulary")]
    Coverage(char),
    #[error("model file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Bpe,
    Unigram,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Bpe => "bpe",
            ModelKind::Unigram => "unigram",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bpe" => Ok(ModelKind::Bpe),
            "unigram" => Ok(ModelKind::Unigram),
            other => Err(format!("unknown model kind {other:?}")),
        }
    }
}

/// Vocabulary sizes evaluated for the shared EN-GA models.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum VocabPreset {
    K4,
    K8,
    #[default]
    K16,
    K32,
}

impl VocabPreset {
    pub const ALL: [VocabPreset; 4] = [VocabPreset::K4, VocabPreset::K8, VocabPreset::K16, VocabPreset::K32];

    pub fn size(self) -> usize {
        match self {
            VocabPreset::K4 => 4_000,
            VocabPreset::K8 => 8_000,
            VocabPreset::K16 => 16_000,
            VocabPreset::K32 => 32_000,
        }
    }
}

impl FromStr for VocabPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "4k" => Ok(VocabPreset::K4),
            "8k" => Ok(VocabPreset::K8),
            "16k" => Ok(VocabPreset::K16),
            "32k" => Ok(VocabPreset::K32),
            other => Err(format!("unknown vocabulary preset {other:?} (expected 4k, 8k, 16k or 32k)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SubwordModel {
    Bpe(BpeModel),
    Unigram(UnigramModel),
}

impl SubwordModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            SubwordModel::Bpe(_) => ModelKind::Bpe,
            SubwordModel::Unigram(_) => ModelKind::Unigram,
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            SubwordModel::Bpe(m) => m.vocab_size(),
            SubwordModel::Unigram(m) => m.vocab_size(),
        }
    }

    pub fn encode(&self, text: &str) -> Result<Vec<String>, SubwordError> {
        let words = split_words(text);
        let mut out = Vec::new();
        for w in &words {
            match self {
                SubwordModel::Bpe(m) => out.extend(m.encode_word(w)),
                SubwordModel::Unigram(m) => out.extend(m.encode_word(w)?),
            }
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {} {}", self.kind(), self.vocab_size(), FORMAT_VERSION)?;
        match self {
            SubwordModel::Bpe(m) => {
                for c in m.alphabet() {
                    writeln!(out, "{}", escape(c))?;
                }
                for (l, r) in m.merges() {
                    writeln!(out, "{}\t{}", escape(l), escape(r))?;
                }
            }
            SubwordModel::Unigram(m) => {
                for (p, lp) in m.pieces() {
                    writeln!(out, "{}\t{lp:?}", escape(p))?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, SubwordError> {
        let mut lines = input.lines().enumerate();
        let parse_err = |line: usize, message: &str| SubwordError::Parse {
            line,
            message: message.to_string(),
        };
        let (_, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
        let header = header?;
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 3 {
            return Err(parse_err(1, "header must be `kind vocab_size version`"));
        }
        let kind: ModelKind = fields[0].parse().map_err(|m: String| parse_err(1, &m))?;
        let vocab_size: usize = fields[1].parse().map_err(|_| parse_err(1, "bad vocab size"))?;
        let version: u32 = fields[2].parse().map_err(|_| parse_err(1, "bad version"))?;
        if version != FORMAT_VERSION {
            return Err(parse_err(1, &format!("unsupported version {version}")));
        }

        let mut alphabet = Vec::new();
        let mut merges = Vec::new();
        let mut pieces = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let line = line?;
            let cols: Vec<&str> = line.split('\t').collect();
            match (kind, cols.as_slice()) {
                (ModelKind::Bpe, [c]) if merges.is_empty() => {
                    let c = unescape(c).ok_or_else(|| parse_err(lineno, "bad escape"))?;
                    if c.chars().count() != 1 {
                        return Err(parse_err(lineno, "alphabet entry must be one character"));
                    }
                    alphabet.push(c);
                }
                (ModelKind::Bpe, [l, r]) => {
                    let l = unescape(l).ok_or_else(|| parse_err(lineno, "bad escape"))?;
                    let r = unescape(r).ok_or_else(|| parse_err(lineno, "bad escape"))?;
                    if l.is_empty() || r.is_empty() {
                        return Err(parse_err(lineno, "empty merge side"));
                    }
                    merges.push((l, r));
                }
                (ModelKind::Unigram, [p, lp]) => {
                    let p = unescape(p).ok_or_else(|| parse_err(lineno, "bad escape"))?;
                    let lp: f64 = lp.parse().map_err(|_| parse_err(lineno, "bad log-prob"))?;
                    pieces.push((p, lp));
                }
                _ => return Err(parse_err(lineno, "malformed entry")),
            }
        }
        let model = match kind {
            ModelKind::Bpe => SubwordModel::Bpe(BpeModel::from_parts(vocab_size, alphabet, merges)?),
            ModelKind::Unigram => {
                if pieces.is_empty() {
                    return Err(parse_err(1, "unigram model has no pieces"));
                }
                SubwordModel::Unigram(UnigramModel::from_pieces(vocab_size, pieces)?)
            }
        };
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SubwordError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SubwordError> {
        Self::read_from(BufReader::new(std::fs::File::open(path)?))
    }
}

pub fn save_model(model: &SubwordModel, path: impl AsRef<Path>) -> Result<(), SubwordError> {
    model.save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SubwordModel, SubwordError> {
    SubwordModel::load(path)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            out.push(match chars.next()? {
                '\\' => '\\',
                't' => '\t',
                'n' => '\n',
                'r' => '\r',
                _ => return None,
            });
        } else {
            out.push(c);
        }
    }
    Some(out)
}

/// Splits raw text into boundary-marked words: every space becomes the
/// marker and each marker opens a new word.
pub fn split_words(text: &str) -> Vec<String> {
    if text.is_empty() {
        return Vec::new();
    }
    let mut words = Vec::new();
    let mut current = String::from(WORD_BOUNDARY);
    for c in text.chars() {
        if c == ' ' {
            words.push(std::mem::take(&mut current));
            current.push(WORD_BOUNDARY);
        } else {
            current.push(c);
        }
    }
    words.push(current);
    words
}

pub(crate) fn count_words(lines: &[&str], exec: Execution) -> HashMap<String, u64> {
    let partials = par::map_chunks(lines, 2048, exec, |chunk| {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for line in chunk {
            for w in split_words(line) {
                *counts.entry(w).or_default() += 1;
            }
        }
        counts
    });
    let mut total: HashMap<String, u64> = HashMap::new();
    for part in partials {
        for (w, c) in part {
            *total.entry(w).or_default() += c;
        }
    }
    total
}

pub fn bpe_train(lines: &[&str], vocab_size: usize) -> Result<SubwordModel, SubwordError> {
    bpe_train_with(lines, vocab_size, Execution::default())
}

pub fn bpe_train_with(lines: &[&str], vocab_size: usize, exec: Execution) -> Result<SubwordModel, SubwordError> {
    bpe::train(lines, vocab_size, exec).map(SubwordModel::Bpe)
}

pub fn unigram_train(lines: &[&str], config: &UnigramConfig) -> Result<UnigramTraining, SubwordError> {
    unigram_train_with(lines, config, Execution::default())
}

pub fn unigram_train_with(
    lines: &[&str],
    config: &UnigramConfig,
    exec: Execution,
) -> Result<UnigramTraining, SubwordError> {
    unigram::train(lines, config, exec)
}

pub fn bpe_encode(model: &SubwordModel, text: &str) -> Result<Vec<String>, SubwordError> {
    match model {
        SubwordModel::Bpe(_) => model.encode(text),
        other => Err(SubwordError::Kind {
            expected: ModelKind::Bpe,
            found: other.kind(),
        }),
    }
}

pub fn unigram_encode(model: &SubwordModel, text: &str) -> Result<Vec<String>, SubwordError> {
    match model {
        SubwordModel::Unigram(_) => model.encode(text),
        other => Err(SubwordError::Kind {
            expected: ModelKind::Unigram,
            found: other.kind(),
        }),
    }
}

/// Concatenates pieces and turns boundary markers back into spaces.
pub fn decode<S: AsRef<str>>(pieces: &[S]) -> String {
    let joined: String = pieces
        .iter()
        .flat_map(|p| p.as_ref().chars())
        .map(|c| if c == WORD_BOUNDARY { ' ' } else { c })
        .collect();
    match joined.strip_prefix(' ') {
        Some(rest) => rest.to_string(),
        None => joined,
    }
}
