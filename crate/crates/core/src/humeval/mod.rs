//! Blind human evaluation campaigns: SQM ratings, MQM error tagging and
//! Cohen's kappa agreement between annotators.

mod ingest;
mod report;
mod scoring;
mod store;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ingest::{ingest_published_dataset, ingest_reader, ColumnMapping, IngestDefaults, MappingConfig};
pub use report::{he_report, HeReport, KappaRow, SystemSummary};
pub use scoring::{
    cohen_kappa, kappa_per_category, mqm_penalty, sqm_aggregate, AgreementBand, KappaEntry, MqmSystemReport,
    MqmWeights, SqmReport, SqmSystem,
};
pub use store::{CampaignStore, StoreError, ANNOTATION_LOG, SESSION_FILE};

pub const SESSION_VERSION: u32 = 1;
pub const MAX_RATING: u8 = 6;

pub type SegmentId = u64;

#[derive(Debug, Error, PartialEq)]
pub enum HumevalError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown annotator {0:?}")]
    UnknownAnnotator(String),
    #[error("unknown segment {0}")]
    UnknownSegment(SegmentId),
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
    #[error("annotator {annotator:?} already submitted segment {segment} slot {slot}")]
    Conflict {
        annotator: String,
        segment: SegmentId,
        slot: String,
    },
    #[error("campaign incomplete: {done} of {total} units annotated")]
    Incomplete { done: usize, total: usize },
    #[error("no ratings to aggregate")]
    EmptyInput,
    #[error("ingestion failed: {}", format_rows(.rows))]
    Ingest { rows: Vec<(usize, String)> },
}

fn format_rows(rows: &[(usize, String)]) -> String {
    rows.iter()
        .map(|(r, m)| if *r == 0 { m.clone() } else { format!("row {r}: {m}") })
        .collect::<Vec<_>>()
        .join("; ")
}

fn validation(field: impl Into<String>, message: impl Into<String>) -> HumevalError {
    HumevalError::Validation {
        field: field.into(),
        message: message.into(),
    }
}

/// The MQM core error tagset, in reporting order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    NonTranslation,
    Addition,
    Omission,
    Mistranslation,
    UntranslatedText,
    Punctuation,
    Spelling,
    Grammar,
    Register,
    Inconsistency,
    CharacterEncoding,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 11] = [
        ErrorCategory::NonTranslation,
        ErrorCategory::Addition,
        ErrorCategory::Omission,
        ErrorCategory::Mistranslation,
        ErrorCategory::UntranslatedText,
        ErrorCategory::Punctuation,
        ErrorCategory::Spelling,
        ErrorCategory::Grammar,
        ErrorCategory::Register,
        ErrorCategory::Inconsistency,
        ErrorCategory::CharacterEncoding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::NonTranslation => "non_translation",
            ErrorCategory::Addition => "addition",
            ErrorCategory::Omission => "omission",
            ErrorCategory::Mistranslation => "mistranslation",
            ErrorCategory::UntranslatedText => "untranslated_text",
            ErrorCategory::Punctuation => "punctuation",
            ErrorCategory::Spelling => "spelling",
            ErrorCategory::Grammar => "grammar",
            ErrorCategory::Register => "register",
            ErrorCategory::Inconsistency => "inconsistency",
            ErrorCategory::CharacterEncoding => "character_encoding",
        }
    }

    /// Accuracy or fluency branch of the tagset.
    pub fn is_accuracy(self) -> bool {
        matches!(
            self,
            ErrorCategory::Addition
                | ErrorCategory::Omission
                | ErrorCategory::Mistranslation
                | ErrorCategory::UntranslatedText
        )
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_lowercase().replace([' ', '-'], "_");
        ErrorCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == key)
            .ok_or_else(|| format!("unknown error category {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Minor,
    Major,
}

impl FromStr for Severity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "minor" => Ok(Severity::Minor),
            "major" => Ok(Severity::Major),
            _ => Err(format!("unknown severity {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: SegmentId,
    pub source: String,
    pub reference: String,
    /// System id to output text.
    pub outputs: BTreeMap<String, String>,
}

/// One error tag as stored: category, severity and optional character span
/// into the output text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorTag {
    pub category: ErrorCategory,
    pub severity: Severity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
}

/// A flattened error annotation with its unit coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ErrorAnnotation<'a> {
    pub annotator: &'a str,
    pub segment: SegmentId,
    pub system: &'a str,
    pub tag: &'a ErrorTag,
}

/// SQM rating of one unit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SqmRating<'a> {
    pub annotator: &'a str,
    pub segment: SegmentId,
    pub system: &'a str,
    pub rating: u8,
}

/// A resolved submission: one line of the annotation log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub annotator: String,
    pub segment: SegmentId,
    pub slot: String,
    pub system: String,
    pub rating: u8,
    pub errors: Vec<ErrorTag>,
    /// Milliseconds since the Unix epoch.
    #[serde(default)]
    pub timestamp_ms: u64,
}

pub fn error_annotations(records: &[AnnotationRecord]) -> impl Iterator<Item = ErrorAnnotation<'_>> {
    records.iter().flat_map(|r| {
        r.errors.iter().map(move |tag| ErrorAnnotation {
            annotator: &r.annotator,
            segment: r.segment,
            system: &r.system,
            tag,
        })
    })
}

pub fn sqm_ratings(records: &[AnnotationRecord]) -> impl Iterator<Item = SqmRating<'_>> {
    records.iter().map(|r| SqmRating {
        annotator: &r.annotator,
        segment: r.segment,
        system: &r.system,
        rating: r.rating,
    })
}

/// Unvalidated error tag as received from a client.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorInput {
    pub category: String,
    #[serde(default)]
    pub severity: Option<String>,
    #[serde(default)]
    pub span: Option<(usize, usize)>,
}

/// Unvalidated submission for one (segment, slot) as received from a client.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub segment: SegmentId,
    pub slot: String,
    pub rating: i64,
    #[serde(default)]
    pub errors: Vec<ErrorInput>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotOutput {
    pub slot: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
}

/// What an annotator sees: slot labels only, never system ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub segment: SegmentId,
    pub source: String,
    pub reference: String,
    pub outputs: Vec<SlotOutput>,
    pub progress: Progress,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextTask {
    Task(TaskPayload),
    Complete { progress: Progress },
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Blinding {
    pub annotator: String,
    pub segment: SegmentId,
    /// System shown in each slot; slot i is labelled `slot_label(i)`.
    pub slots: Vec<String>,
}

/// Display label for slot index `i`: "A", "B", ..., "Z", "AA", ...
pub fn slot_label(mut i: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'A' + (i % 26) as u8);
        if i < 26 {
            break;
        }
        i = i / 26 - 1;
    }
    out.reverse();
    String::from_utf8(out).unwrap()
}

fn slot_index(label: &str, slots: usize) -> Option<usize> {
    (0..slots).find(|&i| slot_label(i) == label)
}

type UnitKey = (String, SegmentId, String);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSession {
    pub version: u32,
    pub seed: u64,
    pub segments: Vec<Segment>,
    pub systems: Vec<String>,
    pub annotators: Vec<String>,
    pub blinding: Vec<Blinding>,
    /// Completed (annotator, segment, system) units; rebuilt from the log.
    #[serde(skip)]
    done: BTreeSet<UnitKey>,
}

fn check_unique<'a, I: IntoIterator<Item = &'a str>>(what: &str, ids: I) -> Result<(), HumevalError> {
    let mut seen = HashSet::new();
    for id in ids {
        if id.is_empty() {
            return Err(HumevalError::Config(format!("empty {what} id")));
        }
        if !seen.insert(id) {
            return Err(HumevalError::Config(format!("duplicate {what} id {id:?}")));
        }
    }
    if seen.is_empty() {
        return Err(HumevalError::Config(format!("no {what}s given")));
    }
    Ok(())
}

/// Builds a session with a seeded per-(annotator, segment) slot shuffle.
pub fn create_session(
    segments: Vec<Segment>,
    systems: Vec<String>,
    annotators: Vec<String>,
    seed: u64,
) -> Result<AnnotationSession, HumevalError> {
    check_unique("system", systems.iter().map(String::as_str))?;
    check_unique("annotator", annotators.iter().map(String::as_str))?;
    if segments.is_empty() {
        return Err(HumevalError::Config("no segments given".into()));
    }
    let mut ids = HashSet::new();
    for s in &segments {
        if !ids.insert(s.id) {
            return Err(HumevalError::Config(format!("duplicate segment id {}", s.id)));
        }
        if s.source.is_empty() {
            return Err(HumevalError::Config(format!("segment {} has an empty source", s.id)));
        }
        for sys in &systems {
            if !s.outputs.contains_key(sys) {
                return Err(HumevalError::Config(format!("segment {} has no output for system {sys:?}", s.id)));
            }
        }
        if let Some(extra) = s.outputs.keys().find(|k| !systems.contains(k)) {
            return Err(HumevalError::Config(format!("segment {} has output for unknown system {extra:?}", s.id)));
        }
    }
    let mut segments = segments;
    segments.sort_by_key(|s| s.id);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blinding = Vec::with_capacity(annotators.len() * segments.len());
    for a in &annotators {
        for s in &segments {
            let mut slots = systems.clone();
            slots.shuffle(&mut rng);
            blinding.push(Blinding {
                annotator: a.clone(),
                segment: s.id,
                slots,
            });
        }
    }
    Ok(AnnotationSession {
        version: SESSION_VERSION,
        seed,
        segments,
        systems,
        annotators,
        blinding,
        done: BTreeSet::new(),
    })
}

impl AnnotationSession {
    /// Re-checks a deserialized session's structural invariants.
    pub fn validate(&self) -> Result<(), HumevalError> {
        if self.version != SESSION_VERSION {
            return Err(HumevalError::Config(format!("unsupported session version {}", self.version)));
        }
        let rebuilt = create_session(self.segments.clone(), self.systems.clone(), self.annotators.clone(), self.seed)?;
        if rebuilt.segments != self.segments {
            return Err(HumevalError::Config("segments are not sorted by id".into()));
        }
        if self.blinding.len() != self.annotators.len() * self.segments.len() {
            return Err(HumevalError::Config("blinding does not cover every annotator and segment".into()));
        }
        let mut sorted_systems = self.systems.clone();
        sorted_systems.sort();
        let n = self.segments.len();
        for (i, b) in self.blinding.iter().enumerate() {
            let mut s = b.slots.clone();
            s.sort();
            if s != sorted_systems || b.annotator != self.annotators[i / n] || b.segment != self.segments[i % n].id {
                return Err(HumevalError::Config(format!(
                    "blinding for ({:?}, {}) is not a bijection onto the systems",
                    b.annotator, b.segment
                )));
            }
        }
        Ok(())
    }

    pub fn total_units(&self) -> usize {
        self.annotators.len() * self.segments.len() * self.systems.len()
    }

    pub fn done_units(&self) -> usize {
        self.done.len()
    }

    pub fn is_complete(&self) -> bool {
        self.done_units() == self.total_units()
    }

    pub fn progress(&self) -> Progress {
        Progress {
            done: self.done_units(),
            total: self.total_units(),
        }
    }

    pub fn annotator_progress(&self, annotator: &str) -> Progress {
        Progress {
            done: self.done.iter().filter(|(a, _, _)| a == annotator).count(),
            total: self.segments.len() * self.systems.len(),
        }
    }

    pub fn is_done(&self, annotator: &str, segment: SegmentId, system: &str) -> bool {
        self.done
            .contains(&(annotator.to_string(), segment, system.to_string()))
    }

    pub fn segment(&self, id: SegmentId) -> Option<&Segment> {
        self.segments
            .binary_search_by_key(&id, |s| s.id)
            .ok()
            .map(|i| &self.segments[i])
    }

    pub fn blinding_for(&self, annotator: &str, segment: SegmentId) -> Option<&Blinding> {
        let a = self.annotators.iter().position(|x| x == annotator)?;
        let s = self.segments.binary_search_by_key(&segment, |x| x.id).ok()?;
        self.blinding.get(a * self.segments.len() + s)
    }

    fn require_annotator(&self, annotator: &str) -> Result<(), HumevalError> {
        if self.annotators.iter().any(|a| a == annotator) {
            Ok(())
        } else {
            Err(HumevalError::UnknownAnnotator(annotator.to_string()))
        }
    }

    /// Lowest-id segment with pending units for `annotator`, showing only
    /// the pending slots.
    pub fn next_task(&self, annotator: &str) -> Result<NextTask, HumevalError> {
        self.require_annotator(annotator)?;
        let progress = self.annotator_progress(annotator);
        for seg in &self.segments {
            let blinding = self.blinding_for(annotator, seg.id).expect("validated blinding");
            let outputs: Vec<SlotOutput> = blinding
                .slots
                .iter()
                .enumerate()
                .filter(|(_, sys)| !self.is_done(annotator, seg.id, sys))
                .map(|(i, sys)| SlotOutput {
                    slot: slot_label(i),
                    text: seg.outputs[sys].clone(),
                })
                .collect();
            if !outputs.is_empty() {
                return Ok(NextTask::Task(TaskPayload {
                    segment: seg.id,
                    source: seg.source.clone(),
                    reference: seg.reference.clone(),
                    outputs,
                    progress,
                }));
            }
        }
        Ok(NextTask::Complete { progress })
    }

    /// Validates a submission and resolves its slot, without marking it done.
    pub fn resolve(&self, annotator: &str, sub: &Submission) -> Result<AnnotationRecord, HumevalError> {
        self.require_annotator(annotator)?;
        let seg = self.segment(sub.segment).ok_or(HumevalError::UnknownSegment(sub.segment))?;
        let blinding = self.blinding_for(annotator, sub.segment).expect("validated blinding");
        let slot = slot_index(&sub.slot, blinding.slots.len())
            .ok_or_else(|| validation("slot", format!("no slot {:?} for this segment", sub.slot)))?;
        let system = blinding.slots[slot].clone();
        if !(0..=i64::from(MAX_RATING)).contains(&sub.rating) {
            return Err(validation("rating", format!("must be in 0..={MAX_RATING}, got {}", sub.rating)));
        }
        let output_len = seg.outputs[&system].chars().count();
        let mut errors = Vec::with_capacity(sub.errors.len());
        for (i, e) in sub.errors.iter().enumerate() {
            let category: ErrorCategory = e
                .category
                .parse()
                .map_err(|m: String| validation(format!("errors[{i}].category"), m))?;
            let severity = match &e.severity {
                Some(s) => s
                    .parse()
                    .map_err(|m: String| validation(format!("errors[{i}].severity"), m))?,
                None => Severity::Minor,
            };
            if let Some((start, end)) = e.span {
                if category == ErrorCategory::NonTranslation {
                    return Err(validation(format!("errors[{i}].span"), "non_translation applies to the whole segment"));
                }
                if start >= end || end > output_len {
                    return Err(validation(
                        format!("errors[{i}].span"),
                        format!("({start}, {end}) is not a span of a {output_len}-character output"),
                    ));
                }
            }
            errors.push(ErrorTag {
                category,
                severity,
                span: e.span,
            });
        }
        if self.is_done(annotator, sub.segment, &system) {
            return Err(HumevalError::Conflict {
                annotator: annotator.to_string(),
                segment: sub.segment,
                slot: sub.slot.clone(),
            });
        }
        Ok(AnnotationRecord {
            annotator: annotator.to_string(),
            segment: sub.segment,
            slot: sub.slot.clone(),
            system,
            rating: sub.rating as u8,
            errors,
            timestamp_ms: 0,
        })
    }

    /// Validates and applies one submission, returning the record to persist.
    pub fn submit_annotation(&mut self, annotator: &str, sub: &Submission) -> Result<AnnotationRecord, HumevalError> {
        let mut record = self.resolve(annotator, sub)?;
        record.timestamp_ms = now_ms();
        self.mark_done(&record);
        Ok(record)
    }

    /// Validates and applies several submissions atomically: either all are
    /// applied or none.
    pub fn submit_batch(&mut self, annotator: &str, subs: &[Submission]) -> Result<Vec<AnnotationRecord>, HumevalError> {
        let mut seen = HashSet::new();
        let mut records = Vec::with_capacity(subs.len());
        for sub in subs {
            let mut r = self.resolve(annotator, sub)?;
            if !seen.insert((r.segment, r.system.clone())) {
                return Err(HumevalError::Conflict {
                    annotator: annotator.to_string(),
                    segment: sub.segment,
                    slot: sub.slot.clone(),
                });
            }
            r.timestamp_ms = now_ms();
            records.push(r);
        }
        for r in &records {
            self.mark_done(r);
        }
        Ok(records)
    }

    /// Re-applies a persisted record, checking it against the blinding.
    pub fn apply(&mut self, record: &AnnotationRecord) -> Result<(), HumevalError> {
        let sub = Submission {
            segment: record.segment,
            slot: record.slot.clone(),
            rating: i64::from(record.rating),
            errors: record
                .errors
                .iter()
                .map(|e| ErrorInput {
                    category: e.category.to_string(),
                    severity: Some(format!("{:?}", e.severity).to_lowercase()),
                    span: e.span,
                })
                .collect(),
        };
        let resolved = self.resolve(&record.annotator, &sub)?;
        if resolved.system != record.system {
            return Err(validation(
                "system",
                format!("slot {} maps to {:?}, record says {:?}", record.slot, resolved.system, record.system),
            ));
        }
        self.mark_done(record);
        Ok(())
    }

    fn mark_done(&mut self, record: &AnnotationRecord) {
        self.done
            .insert((record.annotator.clone(), record.segment, record.system.clone()));
    }
}

fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
