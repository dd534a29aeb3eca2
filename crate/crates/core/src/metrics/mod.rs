//! Automatic translation metrics: BLEU, TER and chrF.
//!
//! Word-level metrics tokenize with [`crate::corpus::tokenize_words`]; the
//! case-insensitive mode lowercases before tokenizing. Corpus scores are
//! built from summed integer statistics, so parallel evaluation returns
//! exactly the sequential result.

mod bleu;
mod chrf;
mod ter;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize, tokenize_words, TextNormalizationConfig};
use crate::par::{self, Execution};

pub use bleu::{BleuReport, BleuStats, Smoothing, MAX_ORDER};
pub use chrf::{f_beta, ChrfReport, ChrfStats, DEFAULT_BETA, DEFAULT_MAX_NGRAM};
pub use ter::{TerEdits, TerReport, MAX_SHIFT_LEN};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("alignment mismatch: {hypotheses} hypotheses vs {references} references")]
    Alignment { hypotheses: usize, references: usize },
    #[error("no segments to score")]
    EmptyInput,
    #[error("empty reference with a non-empty hypothesis")]
    DegenerateReference,
}

fn check_lengths<A, B>(hyps: &[A], refs: &[B]) -> Result<(), MetricsError> {
    if hyps.len() != refs.len() {
        return Err(MetricsError::Alignment {
            hypotheses: hyps.len(),
            references: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(())
}

fn prepare(text: &str, case_insensitive: bool) -> String {
    if case_insensitive {
        normalize(text, &TextNormalizationConfig::casefolded())
    } else {
        text.to_owned()
    }
}

fn words(text: &str, case_insensitive: bool) -> Vec<String> {
    tokenize_words(&prepare(text, case_insensitive))
        .into_iter()
        .map(str::to_owned)
        .collect()
}

/// Corpus BLEU (n = 1..4, clipped counts, unsmoothed).
pub fn bleu_corpus<S: AsRef<str> + Sync>(
    hypotheses: &[S],
    references: &[S],
    case_insensitive: bool,
) -> Result<BleuReport, MetricsError> {
    bleu_corpus_with(hypotheses, references, case_insensitive, Execution::default())
}

pub fn bleu_corpus_with<S: AsRef<str> + Sync>(
    hypotheses: &[S],
    references: &[S],
    case_insensitive: bool,
    exec: Execution,
) -> Result<BleuReport, MetricsError> {
    check_lengths(hypotheses, references)?;
    let stats = par::map_range(hypotheses.len(), exec, |i| {
        BleuStats::from_tokens(
            &words(hypotheses[i].as_ref(), case_insensitive),
            &words(references[i].as_ref(), case_insensitive),
        )
    });
    let total = stats.iter().fold(BleuStats::default(), |acc, s| acc.merge(s));
    Ok(total.report(Smoothing::None))
}

/// Case-insensitive BLEU of a single segment pair.
pub fn bleu_sentence(hypothesis: &str, reference: &str, smoothing: Smoothing) -> f64 {
    let stats = BleuStats::from_tokens(&words(hypothesis, true), &words(reference, true));
    stats.report(smoothing).score
}

fn ter_pair(hyp: &str, reference: &str, case_insensitive: bool) -> (TerEdits, u64) {
    let h = words(hyp, case_insensitive);
    let r = words(reference, case_insensitive);
    let (hi, ri) = ter::intern_pair(&h, &r);
    (ter::ter_edits(&hi, &ri), r.len() as u64)
}

fn ter_report(edits: TerEdits, reference_length: u64) -> Result<TerReport, MetricsError> {
    let score = if reference_length == 0 {
        if edits.total() > 0 {
            return Err(MetricsError::DegenerateReference);
        }
        0.0
    } else {
        edits.total() as f64 / reference_length as f64
    };
    Ok(TerReport {
        score,
        edits,
        reference_length,
    })
}

/// Sentence TER: (insertions + deletions + substitutions + shifts) divided
/// by the reference length.
pub fn ter(hypothesis: &str, reference: &str) -> Result<TerReport, MetricsError> {
    let (edits, len) = ter_pair(hypothesis, reference, false);
    ter_report(edits, len)
}

/// Corpus TER: total edits over total reference words.
pub fn ter_corpus<S: AsRef<str> + Sync>(hypotheses: &[S], references: &[S]) -> Result<TerReport, MetricsError> {
    ter_corpus_with(hypotheses, references, false, Execution::default())
}

pub fn ter_corpus_with<S: AsRef<str> + Sync>(
    hypotheses: &[S],
    references: &[S],
    case_insensitive: bool,
    exec: Execution,
) -> Result<TerReport, MetricsError> {
    check_lengths(hypotheses, references)?;
    let per_pair = par::map_range(hypotheses.len(), exec, |i| {
        ter_pair(hypotheses[i].as_ref(), references[i].as_ref(), case_insensitive)
    });
    let (edits, len) = per_pair
        .iter()
        .fold((TerEdits::default(), 0), |(e, l), (pe, pl)| (e.merge(pe), l + pl));
    ter_report(edits, len)
}

pub fn chrf<S: AsRef<str> + Sync>(
    hypotheses: &[S],
    references: &[S],
    max_ngram: usize,
    beta: f64,
) -> Result<ChrfReport, MetricsError> {
    chrf_with(hypotheses, references, max_ngram, beta, false, Execution::default())
}

pub fn chrf_with<S: AsRef<str> + Sync>(
    hypotheses: &[S],
    references: &[S],
    max_ngram: usize,
    beta: f64,
    case_insensitive: bool,
    exec: Execution,
) -> Result<ChrfReport, MetricsError> {
    check_lengths(hypotheses, references)?;
    let stats = par::map_range(hypotheses.len(), exec, |i| {
        ChrfStats::from_texts(
            &prepare(hypotheses[i].as_ref(), case_insensitive),
            &prepare(references[i].as_ref(), case_insensitive),
            max_ngram,
        )
    });
    let total = stats.iter().fold(ChrfStats::zero(max_ngram), |acc, s| acc.merge(s));
    Ok(total.report(beta))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub case_insensitive: bool,
    pub chrf_beta: f64,
    pub chrf_max_ngram: usize,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            case_insensitive: true,
            chrf_beta: DEFAULT_BETA,
            chrf_max_ngram: DEFAULT_MAX_NGRAM,
            execution: Execution::default(),
        }
    }
}

/// BLEU, TER and chrF for one system output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub version: u32,
    pub segments: usize,
    pub case_insensitive: bool,
    pub bleu: BleuReport,
    pub ter: TerReport,
    pub chrf: ChrfReport,
}

impl MetricReport {
    pub const TSV_HEADER: &'static str = "BLEU\tTER\tCHRF3";

    /// Table-style row: BLEU to one decimal, TER and chrF to two.
    pub fn tsv_row(&self) -> String {
        format!("{:.1}\t{:.2}\t{:.2}", self.bleu.score, self.ter.score, self.chrf.score)
    }

    pub fn human(&self) -> String {
        let mut out = String::new();
        let b = &self.bleu;
        let _ = writeln!(
            out,
            "BLEU {:.1} ({}) BP={:.3} hyp_len={} ref_len={}",
            b.score,
            b.ngram_precisions
                .iter()
                .map(|p| format!("{:.1}", p * 100.0))
                .collect::<Vec<_>>()
                .join("/"),
            b.brevity_penalty,
            b.hypothesis_length,
            b.reference_length
        );
        let t = &self.ter.edits;
        let _ = writeln!(
            out,
            "TER {:.2} (ins={} del={} sub={} shift={} ref_len={})",
            self.ter.score, t.insertions, t.deletions, t.substitutions, t.shifts, self.ter.reference_length
        );
        let _ = writeln!(
            out,
            "CHRF{} {:.2} (P={:.3} R={:.3} n={})",
            self.chrf.beta, self.chrf.score, self.chrf.char_precision, self.chrf.char_recall, self.chrf.max_ngram
        );
        out
    }
}

pub fn evaluate_all<S: AsRef<str> + Sync>(
    hypotheses: &[S],
    references: &[S],
    config: &MetricConfig,
) -> Result<MetricReport, MetricsError> {
    let exec = config.execution;
    let ci = config.case_insensitive;
    Ok(MetricReport {
        version: REPORT_VERSION,
        segments: hypotheses.len(),
        case_insensitive: ci,
        bleu: bleu_corpus_with(hypotheses, references, ci, exec)?,
        ter: ter_corpus_with(hypotheses, references, ci, exec)?,
        chrf: chrf_with(hypotheses, references, config.chrf_max_ngram, config.chrf_beta, ci, exec)?,
    })
}
