//! Parallel corpus ingestion, splitting and text normalization.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("alignment mismatch: {source_lines} source lines vs {target_lines} target lines")]
    Alignment {
        source_lines: usize,
        target_lines: usize,
    },
    #[error("{path}: invalid UTF-8 on line {line}")]
    Encoding { path: PathBuf, line: usize },
    #[error("line {line}: tab character inside sentence")]
    Tab { line: usize },
    #[error("line {line}: both source and target are empty")]
    EmptyPair { line: usize },
    #[error("split of {dev} dev + {test} test lines needs more than {available} pairs")]
    Size {
        dev: usize,
        test: usize,
        available: usize,
    },
    #[error("corpus is empty")]
    EmptyInput,
    #[error("TSV line {line}: {message}")]
    Tsv { line: usize, message: String },
    #[error("split labels cover {labels} pairs but corpus has {pairs}")]
    Labels { labels: usize, pairs: usize },
}

/// Which partition of the corpus a pair belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split label {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub source: String,
    pub target: String,
}

impl SentencePair {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        SentencePair {
            source: source.into(),
            target: target.into(),
        }
    }

    /// One side blank. Such pairs are kept; metrics score them as zero-match.
    pub fn is_partial(&self) -> bool {
        self.source.is_empty() != self.target.is_empty()
    }
}

/// Aligned source/target sentences with optional train/dev/test labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParallelCorpus {
    pairs: Vec<SentencePair>,
    labels: Option<Vec<Split>>,
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<SentencePair>) -> Result<Self, CorpusError> {
        for (i, pair) in pairs.iter().enumerate() {
            check_pair(pair, i + 1)?;
        }
        Ok(ParallelCorpus {
            pairs,
            labels: None,
        })
    }

    pub fn with_labels(pairs: Vec<SentencePair>, labels: Vec<Split>) -> Result<Self, CorpusError> {
        if labels.len() != pairs.len() {
            return Err(CorpusError::Labels {
                labels: labels.len(),
                pairs: pairs.len(),
            });
        }
        let mut corpus = Self::new(pairs)?;
        corpus.labels = Some(labels);
        Ok(corpus)
    }

    pub fn pairs(&self) -> &[SentencePair] {
        &self.pairs
    }

    pub fn labels(&self) -> Option<&[Split]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.source.as_str())
    }

    pub fn targets(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.target.as_str())
    }

    /// Pairs carrying `split`, or all pairs when the corpus is unlabeled.
    pub fn subset(&self, split: Split) -> Vec<&SentencePair> {
        match &self.labels {
            None => self.pairs.iter().collect(),
            Some(labels) => self
                .pairs
                .iter()
                .zip(labels)
                .filter(|(_, l)| **l == split)
                .map(|(p, _)| p)
                .collect(),
        }
    }

    pub fn count(&self, split: Split) -> usize {
        match &self.labels {
            None => 0,
            Some(labels) => labels.iter().filter(|l| **l == split).count(),
        }
    }

    /// Writes `source<TAB>target<TAB>split` lines. Unlabeled corpora leave the
    /// last column empty.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, pair) in self.pairs.iter().enumerate() {
            let label = self
                .labels
                .as_ref()
                .map(|l| l[i].to_string())
                .unwrap_or_default();
            writeln!(out, "{}\t{}\t{}", pair.source, pair.target, label)?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R) -> Result<Self, CorpusError> {
        let mut pairs = Vec::new();
        let mut labels = Vec::new();
        let mut any_label = false;
        for (i, line) in input.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|_| CorpusError::Tsv {
                line: lineno,
                message: "unreadable line".into(),
            })?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(CorpusError::Tsv {
                    line: lineno,
                    message: format!("expected 3 columns, found {}", fields.len()),
                });
            }
            if !fields[2].is_empty() {
                any_label = true;
                let split = fields[2].parse().map_err(|message| CorpusError::Tsv {
                    line: lineno,
                    message,
                })?;
                labels.push(Some(split));
            } else {
                labels.push(None);
            }
            pairs.push(SentencePair::new(fields[0], fields[1]));
        }
        if !any_label {
            return Self::new(pairs);
        }
        let labels = labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                l.ok_or(CorpusError::Tsv {
                    line: i + 1,
                    message: "missing split label".into(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::with_labels(pairs, labels)
    }
}

fn check_pair(pair: &SentencePair, line: usize) -> Result<(), CorpusError> {
    if pair.source.is_empty() && pair.target.is_empty() {
        return Err(CorpusError::EmptyPair { line });
    }
    if pair.source.contains('\t') || pair.target.contains('\t') {
        return Err(CorpusError::Tab { line });
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    let body = bytes.strip_suffix(b"\n").unwrap_or(&bytes);
    body.split(|b| *b == b'\n')
        .enumerate()
        .map(|(i, raw)| {
            let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
            String::from_utf8(raw.to_vec()).map_err(|_| CorpusError::Encoding {
                path: path.to_path_buf(),
                line: i + 1,
            })
        })
        .collect()
}

/// Reads two one-sentence-per-line files into an aligned corpus.
pub fn load_parallel(
    source_path: impl AsRef<Path>,
    target_path: impl AsRef<Path>,
) -> Result<ParallelCorpus, CorpusError> {
    let sources = read_lines(source_path.as_ref())?;
    let targets = read_lines(target_path.as_ref())?;
    if sources.len() != targets.len() {
        return Err(CorpusError::Alignment {
            source_lines: sources.len(),
            target_lines: targets.len(),
        });
    }
    let pairs = sources
        .into_iter()
        .zip(targets)
        .map(|(s, t)| SentencePair::new(s, t))
        .collect();
    ParallelCorpus::new(pairs)
}

/// Labels `dev_count` + `test_count` pairs by a seeded uniform shuffle; the
/// rest become training data.
pub fn split_corpus(
    corpus: &ParallelCorpus,
    dev_count: usize,
    test_count: usize,
    seed: u64,
) -> Result<ParallelCorpus, CorpusError> {
    let n = corpus.len();
    if dev_count + test_count >= n {
        return Err(CorpusError::Size {
            dev: dev_count,
            test: test_count,
            available: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut labels = vec![Split::Train; n];
    for &i in &order[..dev_count] {
        labels[i] = Split::Dev;
    }
    for &i in &order[dev_count..dev_count + test_count] {
        labels[i] = Split::Test;
    }
    Ok(ParallelCorpus {
        pairs: corpus.pairs.clone(),
        labels: Some(labels),
    })
}

/// All source sentences followed by all target sentences (training split
/// only when labeled), the input for a shared subword vocabulary.
pub fn concat_bilingual(corpus: &ParallelCorpus) -> Result<Vec<&str>, CorpusError> {
    let train = corpus.subset(Split::Train);
    if train.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let mut out = Vec::with_capacity(train.len() * 2);
    out.extend(train.iter().map(|p| p.source.as_str()));
    out.extend(train.iter().map(|p| p.target.as_str()));
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnicodeForm {
    #[default]
    None,
    /// NFC.
    CanonicalComposition,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextNormalizationConfig {
    pub casefold: bool,
    pub unicode_normalization_form: UnicodeForm,
}

impl TextNormalizationConfig {
    pub fn casefolded() -> Self {
        TextNormalizationConfig {
            casefold: true,
            unicode_normalization_form: UnicodeForm::None,
        }
    }
}

pub fn normalize(text: &str, config: &TextNormalizationConfig) -> String {
    let mut out = match config.unicode_normalization_form {
        UnicodeForm::None => text.to_owned(),
        UnicodeForm::CanonicalComposition => text.nfc().collect(),
    };
    if config.casefold {
        out = out.to_lowercase();
        // lowercasing can emit combining sequences (e.g. U+0130)
        if config.unicode_normalization_form == UnicodeForm::CanonicalComposition {
            out = out.nfc().collect();
        }
    }
    out
}

pub fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// Whitespace split, with every punctuation character emitted as its own token.
pub fn tokenize_words(text: &str) -> Vec<&str> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut start = 0;
        for (i, c) in word.char_indices() {
            if is_punctuation(c) {
                if start < i {
                    tokens.push(&word[start..i]);
                }
                let end = i + c.len_utf8();
                tokens.push(&word[i..end]);
                start = end;
            }
        }
        if start < word.len() {
            tokens.push(&word[start..]);
        }
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &[u8]) -> PathBuf {
        let path = dir.path().join(name);
        std::fs::File::create(&path).unwrap().write_all(body).unwrap();
        path
    }

    fn corpus(n: usize) -> ParallelCorpus {
        ParallelCorpus::new(
            (0..n)
                .map(|i| SentencePair::new(format!("s{i}"), format!("t{i}")))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn load_zips_lines() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(&dir, "src", b"a\nb");
        let t = write(&dir, "tgt", b"x\ny\n");
        let c = load_parallel(&s, &t).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.pairs()[1], SentencePair::new("b", "y"));
    }

    #[test]
    fn load_reports_both_counts() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(&dir, "src", b"a\nb\n");
        let t = write(&dir, "tgt", b"x\ny\nz\n");
        match load_parallel(&s, &t) {
            Err(CorpusError::Alignment {
                source_lines: 2,
                target_lines: 3,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_flags_bad_utf8_line() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(&dir, "src", b"ok\n\xff\xfe\n");
        let t = write(&dir, "tgt", b"x\ny\n");
        assert!(matches!(
            load_parallel(&s, &t),
            Err(CorpusError::Encoding { line: 2, .. })
        ));
    }

    #[test]
    fn load_rejects_tabs_and_blank_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(&dir, "src", b"a\tb\n");
        let t = write(&dir, "tgt", b"x\n");
        assert!(matches!(load_parallel(&s, &t), Err(CorpusError::Tab { line: 1 })));
        let s = write(&dir, "src2", b"a\n\n");
        let t = write(&dir, "tgt2", b"x\n\n");
        assert!(matches!(
            load_parallel(&s, &t),
            Err(CorpusError::EmptyPair { line: 2 })
        ));
    }

    #[test]
    fn partial_pairs_are_kept() {
        let c = ParallelCorpus::new(vec![SentencePair::new("a", "")]).unwrap();
        assert!(c.pairs()[0].is_partial());
    }

    #[test]
    fn split_counts() {
        let c = split_corpus(&corpus(10), 2, 2, 7).unwrap();
        assert_eq!(
            (c.count(Split::Train), c.count(Split::Dev), c.count(Split::Test)),
            (6, 2, 2)
        );
        assert_eq!(c, split_corpus(&corpus(10), 2, 2, 7).unwrap());
        assert!(matches!(
            split_corpus(&corpus(3), 2, 2, 7),
            Err(CorpusError::Size { .. })
        ));
    }

    #[test]
    fn split_at_dgt_scale() {
        let c = split_corpus(&corpus(52_000), 2600, 1300, 11).unwrap();
        assert_eq!(c.count(Split::Train), 48_100);
        assert_eq!(c.count(Split::Dev), 2600);
        assert_eq!(c.count(Split::Test), 1300);
    }

    #[test]
    fn concat_orders_sources_first() {
        let c = ParallelCorpus::new(vec![SentencePair::new("a", "x"), SentencePair::new("b", "y")])
            .unwrap();
        assert_eq!(concat_bilingual(&c).unwrap(), vec!["a", "b", "x", "y"]);
        let labeled = split_corpus(&corpus(10), 2, 2, 1).unwrap();
        let stream = concat_bilingual(&labeled).unwrap();
        assert_eq!(stream.len(), 12);
        let train: Vec<_> = labeled.subset(Split::Train).iter().map(|p| p.source.clone()).collect();
        assert!(stream[..6].iter().zip(&train).all(|(a, b)| a == b));
        let empty = ParallelCorpus::new(vec![]).unwrap();
        assert!(matches!(concat_bilingual(&empty), Err(CorpusError::EmptyInput)));
    }

    #[test]
    fn concat_line_count_at_scale() {
        let c = corpus(52_000);
        let stream = concat_bilingual(&c).unwrap();
        let expected: usize = c.sources().count() + c.targets().count();
        assert_eq!(stream.len(), expected);
        assert_eq!(stream.len(), 104_000);
    }

    #[test]
    fn tsv_roundtrip() {
        let c = split_corpus(&corpus(5), 1, 1, 3).unwrap();
        let mut buf = Vec::new();
        c.write_tsv(&mut buf).unwrap();
        assert_eq!(ParallelCorpus::read_tsv(&buf[..]).unwrap(), c);
        assert!(matches!(
            ParallelCorpus::read_tsv(&b"a\tb\n"[..]),
            Err(CorpusError::Tsv { line: 1, .. })
        ));
    }

    #[test]
    fn casefold_examples() {
        let cfg = TextNormalizationConfig::casefolded();
        assert_eq!(normalize("The Office", &cfg), "the office");
        assert_eq!(normalize("teaghlaigh", &cfg), "teaghlaigh");
        // U+00CD lowercases to U+00ED in the Unicode case table
        assert_eq!(normalize("N\u{00CD}", &cfg), "n\u{00ED}");
        assert_eq!(normalize("Ní", &cfg), "ní");
    }

    #[test]
    fn nfc_composes() {
        let cfg = TextNormalizationConfig {
            casefold: false,
            unicode_normalization_form: UnicodeForm::CanonicalComposition,
        };
        assert_eq!(normalize("ni\u{0301}", &cfg), "n\u{00ED}");
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(
            tokenize_words("teaghlaigh ina gcoimeádtar peataí;"),
            vec!["teaghlaigh", "ina", "gcoimeádtar", "peataí", ";"]
        );
        assert!(tokenize_words("").is_empty());
        assert_eq!(tokenize_words("a,b"), vec!["a", ",", "b"]);
        // symbols are not punctuation
        assert_eq!(tokenize_words("1+1"), vec!["1+1"]);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}", casefold: bool, nfc: bool) {
            let cfg = TextNormalizationConfig {
                casefold,
                unicode_normalization_form: if nfc { UnicodeForm::CanonicalComposition } else { UnicodeForm::None },
            };
            let once = normalize(&s, &cfg);
            prop_assert_eq!(normalize(&once, &cfg), once);
        }

        #[test]
        fn tokens_cover_content(s in "[a-z,.;!? \t\u{e1}\u{ed}]{0,40}") {
            let tokens = tokenize_words(&s);
            prop_assert!(tokens.iter().all(|t| !t.is_empty()));
            prop_assert!(tokens.len() >= s.split_whitespace().count());
            let content: String = s.chars().filter(|c| !c.is_whitespace()).collect();
            prop_assert_eq!(tokens.concat(), content);
        }

        #[test]
        fn split_is_deterministic_partition(n in 3usize..60, seed: u64) {
            let c = corpus(n);
            let dev = (n - 1) / 3;
            let test = (n - 1) / 3;
            let a = split_corpus(&c, dev, test, seed).unwrap();
            prop_assert_eq!(&a, &split_corpus(&c, dev, test, seed).unwrap());
            prop_assert_eq!(a.labels().unwrap().len(), n);
            prop_assert_eq!(a.count(Split::Train) + a.count(Split::Dev) + a.count(Split::Test), n);
        }
    }
}
