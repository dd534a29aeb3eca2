use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    create_session, slot_label, AnnotationRecord, AnnotationSession, ErrorCategory, ErrorTag, HumevalError,
    Segment, SegmentId, Severity,
};

pub const MAPPING_VERSION: u32 = 1;

/// Dataset column names bound to campaign fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMapping {
    pub annotator: String,
    pub segment: String,
    pub system: String,
    pub rating: String,
    pub category: String,
    #[serde(default)]
    pub severity: Option<String>,
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default)]
    pub reference: Option<String>,
    #[serde(default)]
    pub output: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestDefaults {
    /// Severity for rows with an empty severity cell, and for every row when
    /// no severity column is mapped.
    #[serde(default)]
    pub severity: Option<Severity>,
}

/// Versioned TOML mapping from a published annotation export to a campaign.
///
/// ```toml
/// version = 1
/// delimiter = ","
/// [columns]
/// annotator = "annotator"
/// segment = "sentence_id"
/// system = "system"
/// rating = "sqm"
/// category = "error_type"
/// severity = "severity"
/// [defaults]
/// severity = "minor"
/// [categories]
/// "Word order" = "grammar"
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingConfig {
    pub version: u32,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default)]
    pub seed: u64,
    pub columns: ColumnMapping,
    #[serde(default)]
    pub defaults: IngestDefaults,
    /// Dataset labels to core categories, checked before the built-in names.
    #[serde(default)]
    pub categories: BTreeMap<String, ErrorCategory>,
    /// Dataset system labels to campaign system ids.
    #[serde(default)]
    pub systems: BTreeMap<String, String>,
}

fn default_delimiter() -> char {
    ','
}

impl MappingConfig {
    pub fn from_toml(text: &str) -> Result<Self, HumevalError> {
        let cfg: MappingConfig = toml::from_str(text).map_err(|e| HumevalError::Config(e.to_string()))?;
        if cfg.version != MAPPING_VERSION {
            return Err(HumevalError::Config(format!("unsupported mapping version {}", cfg.version)));
        }
        if !cfg.delimiter.is_ascii() {
            return Err(HumevalError::Config("delimiter must be an ASCII character".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HumevalError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| HumevalError::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml(&text)
    }
}

#[derive(Default)]
struct Unit {
    rating: Option<(u8, usize)>,
    errors: Vec<ErrorTag>,
}

struct Columns {
    annotator: usize,
    segment: usize,
    system: usize,
    rating: usize,
    category: usize,
    severity: Option<usize>,
    source: Option<usize>,
    reference: Option<usize>,
    output: Option<usize>,
}

fn locate(header: &csv::StringRecord, cfg: &ColumnMapping) -> Result<Columns, HumevalError> {
    let mut missing = Vec::new();
    let mut find = |name: &str| {
        let idx = header.iter().position(|h| h.trim() == name);
        if idx.is_none() {
            missing.push(name.to_string());
        }
        idx.unwrap_or(0)
    };
    let annotator = find(&cfg.annotator);
    let segment = find(&cfg.segment);
    let system = find(&cfg.system);
    let rating = find(&cfg.rating);
    let category = find(&cfg.category);
    let severity = cfg.severity.as_deref().map(&mut find);
    let source = cfg.source.as_deref().map(&mut find);
    let reference = cfg.reference.as_deref().map(&mut find);
    let output = cfg.output.as_deref().map(&mut find);
    if !missing.is_empty() {
        return Err(HumevalError::Ingest {
            rows: vec![(1, format!("missing column(s): {}", missing.join(", ")))],
        });
    }
    Ok(Columns {
        annotator,
        segment,
        system,
        rating,
        category,
        severity,
        source,
        reference,
        output,
    })
}

/// Reads a published annotation export into a completed session plus its
/// records. Every row names (annotator, segment, system); a non-empty
/// rating cell sets the unit's SQM rating and a non-empty category cell adds
/// one error tag. All rows that cannot be mapped are reported together with
/// their line numbers.
pub fn ingest_reader<R: Read>(
    reader: R,
    cfg: &MappingConfig,
) -> Result<(AnnotationSession, Vec<AnnotationRecord>), HumevalError> {
    if cfg.columns.severity.is_none() && cfg.defaults.severity.is_none() {
        return Err(HumevalError::Ingest {
            rows: vec![(0, "no severity column mapped and no default severity configured".into())],
        });
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(cfg.delimiter as u8)
        .flexible(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| HumevalError::Ingest { rows: vec![(1, e.to_string())] })?
        .clone();
    let cols = locate(&header, &cfg.columns)?;

    let mut problems: Vec<(usize, String)> = Vec::new();
    let mut annotators: Vec<String> = Vec::new();
    let mut systems: Vec<String> = Vec::new();
    let mut texts: BTreeMap<SegmentId, (String, String, BTreeMap<String, String>)> = BTreeMap::new();
    let mut units: HashMap<(String, SegmentId, String), Unit> = HashMap::new();

    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                problems.push((line, e.to_string()));
                continue;
            }
        };
        let cell = |idx: usize| row.get(idx).map(str::trim).unwrap_or("");
        let annotator = cell(cols.annotator);
        let system_label = cell(cols.system);
        let system = cfg.systems.get(system_label).map(String::as_str).unwrap_or(system_label);
        if annotator.is_empty() || system.is_empty() {
            problems.push((line, "empty annotator or system".into()));
            continue;
        }
        let segment: SegmentId = match cell(cols.segment).parse() {
            Ok(s) => s,
            Err(_) => {
                problems.push((line, format!("segment id {:?} is not an integer", cell(cols.segment))));
                continue;
            }
        };
        let rating = match cell(cols.rating) {
            "" => None,
            r => match r.parse::<f64>() {
                Ok(v) if v.fract() == 0.0 && (0.0..=6.0).contains(&v) => Some(v as u8),
                _ => {
                    problems.push((line, format!("rating {r:?} is not an integer in 0..=6")));
                    continue;
                }
            },
        };
        let tag = match cell(cols.category) {
            "" => None,
            label => {
                let category = match cfg.categories.get(label) {
                    Some(c) => *c,
                    None => match label.parse::<ErrorCategory>() {
                        Ok(c) => c,
                        Err(m) => {
                            problems.push((line, m));
                            continue;
                        }
                    },
                };
                let severity = match cols.severity.map(&cell).unwrap_or("") {
                    "" => cfg.defaults.severity.unwrap_or(Severity::Minor),
                    s => match s.parse() {
                        Ok(s) => s,
                        Err(m) => {
                            problems.push((line, m));
                            continue;
                        }
                    },
                };
                Some(ErrorTag {
                    category,
                    severity,
                    span: None,
                })
            }
        };

        if !annotators.iter().any(|a| a == annotator) {
            annotators.push(annotator.to_string());
        }
        if !systems.iter().any(|s| s == system) {
            systems.push(system.to_string());
        }
        let entry = texts.entry(segment).or_default();
        if let Some(idx) = cols.source {
            if entry.0.is_empty() {
                entry.0 = cell(idx).to_string();
            }
        }
        if let Some(idx) = cols.reference {
            if entry.1.is_empty() {
                entry.1 = cell(idx).to_string();
            }
        }
        let output = cols.output.map(|idx| cell(idx).to_string()).unwrap_or_default();
        let slot_text = entry.2.entry(system.to_string()).or_default();
        if slot_text.is_empty() {
            *slot_text = output;
        }

        let unit = units.entry((annotator.to_string(), segment, system.to_string())).or_default();
        if let Some(r) = rating {
            match unit.rating {
                Some((prev, prev_line)) if prev != r => {
                    problems.push((line, format!("rating {r} conflicts with rating {prev} on line {prev_line}")));
                    continue;
                }
                Some(_) => {}
                None => unit.rating = Some((r, line)),
            }
        }
        unit.errors.extend(tag);
    }
    if !problems.is_empty() {
        return Err(HumevalError::Ingest { rows: problems });
    }
    if units.is_empty() {
        return Err(HumevalError::Ingest { rows: vec![(0, "no data rows".into())] });
    }

    let segments: Vec<Segment> = texts
        .into_iter()
        .map(|(id, (source, reference, mut outputs))| {
            for sys in &systems {
                outputs.entry(sys.clone()).or_default();
            }
            Segment {
                id,
                source: if source.is_empty() { format!("segment {id}") } else { source },
                reference,
                outputs,
            }
        })
        .collect();
    let mut session = create_session(segments, systems, annotators, cfg.seed)?;

    let mut records = Vec::with_capacity(session.total_units());
    let mut missing = Vec::new();
    for annotator in &session.annotators {
        for seg in &session.segments {
            let blinding = session.blinding_for(annotator, seg.id).expect("fresh session");
            for system in &session.systems {
                let key = (annotator.clone(), seg.id, system.clone());
                match units.remove(&key) {
                    Some(Unit { rating: Some((rating, _)), errors }) => records.push(AnnotationRecord {
                        annotator: annotator.clone(),
                        segment: seg.id,
                        slot: slot_label(blinding.slots.iter().position(|s| s == system).unwrap()),
                        system: system.clone(),
                        rating,
                        errors,
                        timestamp_ms: 0,
                    }),
                    _ => missing.push((0, format!("no rating for annotator {annotator:?}, segment {}, system {system:?}", seg.id))),
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(HumevalError::Ingest { rows: missing });
    }
    for r in &records {
        session.apply(r)?;
    }
    Ok((session, records))
}

pub fn ingest_published_dataset(
    path: impl AsRef<Path>,
    cfg: &MappingConfig,
) -> Result<(AnnotationSession, Vec<AnnotationRecord>), HumevalError> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| HumevalError::Ingest {
        rows: vec![(0, format!("{}: {e}", path.as_ref().display()))],
    })?;
    ingest_reader(file, cfg)
}
