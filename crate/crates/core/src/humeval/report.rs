use std::collections::BTreeMap;
use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::scoring::{kappa_per_category, mqm_penalty, sqm_aggregate, KappaEntry, MqmWeights};
use super::{AnnotationRecord, AnnotationSession, ErrorCategory, HumevalError, Progress};
use crate::metrics::MetricReport;

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSummary {
    pub system: String,
    pub bleu: Option<f64>,
    pub ter: Option<f64>,
    pub chrf: Option<f64>,
    pub sqm_mean: Option<f64>,
    pub mqm_penalty: f64,
    pub mqm_penalty_per_segment: f64,
    pub mqm_quality: f64,
    pub error_count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorTotals {
    pub annotator: String,
    pub errors: IndexMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: ErrorCategory,
    pub counts: IndexMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaRow {
    pub category: ErrorCategory,
    pub annotator_a: String,
    pub annotator_b: String,
    pub systems: IndexMap<String, KappaEntry>,
}

/// Combined automatic and human evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeReport {
    pub version: u32,
    pub complete: bool,
    pub progress: Progress,
    pub weights: MqmWeights,
    pub systems: Vec<SystemSummary>,
    pub annotator_totals: Vec<AnnotatorTotals>,
    pub categories: Vec<CategoryRow>,
    pub category_totals: IndexMap<String, u64>,
    /// Empty until the campaign is complete.
    pub kappa: Vec<KappaRow>,
}

/// Builds the report. With `strict` an incomplete campaign is an error;
/// otherwise a partial report is returned with `complete = false`.
pub fn he_report(
    session: &AnnotationSession,
    records: &[AnnotationRecord],
    metrics: &BTreeMap<String, MetricReport>,
    weights: &MqmWeights,
    strict: bool,
) -> Result<HeReport, HumevalError> {
    weights.validate()?;
    let progress = session.progress();
    let complete = session.is_complete();
    if strict && !complete {
        return Err(HumevalError::Incomplete {
            done: progress.done,
            total: progress.total,
        });
    }
    let mqm = mqm_penalty(
        records,
        &session.systems,
        session.segments.len(),
        session.annotators.len(),
        weights,
    );
    let sqm = sqm_aggregate(records).ok();
    let systems = session
        .systems
        .iter()
        .zip(&mqm)
        .map(|(sys, m)| {
            let auto = metrics.get(sys);
            SystemSummary {
                system: sys.clone(),
                bleu: auto.map(|r| r.bleu.score),
                ter: auto.map(|r| r.ter.score),
                chrf: auto.map(|r| r.chrf.score),
                sqm_mean: sqm.as_ref().and_then(|s| s.systems.get(sys)).map(|s| s.mean),
                mqm_penalty: m.total_penalty,
                mqm_penalty_per_segment: m.penalty_per_segment,
                mqm_quality: m.quality_score,
                error_count: m.error_count,
            }
        })
        .collect();

    let annotator_totals = session
        .annotators
        .iter()
        .map(|a| AnnotatorTotals {
            annotator: a.clone(),
            errors: session
                .systems
                .iter()
                .map(|sys| {
                    let n = records
                        .iter()
                        .filter(|r| &r.annotator == a && &r.system == sys)
                        .map(|r| r.errors.len() as u64)
                        .sum();
                    (sys.clone(), n)
                })
                .collect(),
        })
        .collect();

    let categories = ErrorCategory::ALL
        .iter()
        .map(|&c| CategoryRow {
            category: c,
            counts: mqm
                .iter()
                .map(|m| (m.system.clone(), m.category_counts[&c]))
                .collect(),
        })
        .collect();
    let category_totals = mqm.iter().map(|m| (m.system.clone(), m.error_count)).collect();

    let mut kappa = Vec::new();
    if complete {
        let segment_ids: Vec<_> = session.segments.iter().map(|s| s.id).collect();
        for (i, a) in session.annotators.iter().enumerate() {
            for b in &session.annotators[i + 1..] {
                let mut per_system = Vec::new();
                for sys in &session.systems {
                    per_system.push((sys, kappa_per_category(records, a, b, sys, &segment_ids)?));
                }
                for &c in &ErrorCategory::ALL {
                    kappa.push(KappaRow {
                        category: c,
                        annotator_a: a.clone(),
                        annotator_b: b.clone(),
                        systems: per_system
                            .iter()
                            .map(|(sys, table)| ((*sys).clone(), table[&c].clone()))
                            .collect(),
                    });
                }
            }
        }
    }

    Ok(HeReport {
        version: REPORT_VERSION,
        complete,
        progress,
        weights: *weights,
        systems,
        annotator_totals,
        categories,
        category_totals,
        kappa,
    })
}

fn opt(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.decimals$}"))
}

impl HeReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    fn system_names(&self) -> Vec<&str> {
        self.systems.iter().map(|s| s.system.as_str()).collect()
    }

    /// Tab-separated tables: system summary, annotator totals, error
    /// categories and kappa, separated by blank lines.
    pub fn to_tsv(&self) -> String {
        let names = self.system_names();
        let mut out = String::new();
        writeln!(out, "# complete\t{}\t{}/{}", self.complete, self.progress.done, self.progress.total).unwrap();
        out.push('\n');

        out.push_str("system\tBLEU\tTER\tCHRF3\tSQM\tMQM_penalty\tMQM_quality\terrors\n");
        for s in &self.systems {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{:.2}\t{}",
                s.system,
                opt(s.bleu, 1),
                opt(s.ter, 2),
                opt(s.chrf, 2),
                opt(s.sqm_mean, 2),
                s.mqm_penalty,
                s.mqm_quality,
                s.error_count
            )
            .unwrap();
        }
        out.push('\n');

        writeln!(out, "annotator\t{}", names.join("\t")).unwrap();
        for a in &self.annotator_totals {
            let cells: Vec<String> = a.errors.values().map(u64::to_string).collect();
            writeln!(out, "{}\t{}", a.annotator, cells.join("\t")).unwrap();
        }
        out.push('\n');

        writeln!(out, "category\t{}", names.join("\t")).unwrap();
        for row in &self.categories {
            let cells: Vec<String> = row.counts.values().map(u64::to_string).collect();
            writeln!(out, "{}\t{}", row.category, cells.join("\t")).unwrap();
        }
        let cells: Vec<String> = self.category_totals.values().map(u64::to_string).collect();
        writeln!(out, "total\t{}", cells.join("\t")).unwrap();

        if !self.kappa.is_empty() {
            out.push('\n');
            out.push_str(&self.kappa_tsv());
        }
        out
    }

    /// Kappa table only: one row per (annotator pair, category), one column
    /// per system.
    pub fn kappa_tsv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "annotators\tcategory\t{}", self.system_names().join("\t")).unwrap();
        for row in &self.kappa {
            let cells: Vec<String> = row.systems.values().map(|k| format!("{:.3}", k.kappa)).collect();
            writeln!(out, "{}/{}\t{}\t{}", row.annotator_a, row.annotator_b, row.category, cells.join("\t")).unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::super::{create_session, Segment, Submission};
    use super::*;
    use crate::humeval::ErrorInput;

    fn session(annotators: &[&str]) -> AnnotationSession {
        let segments = (1..=4)
            .map(|id| Segment {
                id,
                source: format!("s{id}"),
                reference: format!("r{id}"),
                outputs: [("rnn", "out one"), ("transformer", "out two")]
                    .iter()
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .collect(),
            })
            .collect();
        create_session(
            segments,
            vec!["rnn".into(), "transformer".into()],
            annotators.iter().map(|s| s.to_string()).collect(),
            11,
        )
        .unwrap()
    }

    fn fill(s: &mut AnnotationSession, errors: &[&str]) -> Vec<AnnotationRecord> {
        let mut recs = Vec::new();
        for a in s.annotators.clone() {
            for seg in 1..=4 {
                for slot in ["A", "B"] {
                    let sub = Submission {
                        segment: seg,
                        slot: slot.into(),
                        rating: 5,
                        errors: errors.iter().map(|c| ErrorInput { category: c.to_string(), ..Default::default() }).collect(),
                    };
                    recs.push(s.submit_annotation(&a, &sub).unwrap());
                }
            }
        }
        recs
    }

    #[test]
    fn empty_campaign_partial_report() {
        let s = session(&["a", "b"]);
        let err = he_report(&s, &[], &BTreeMap::new(), &MqmWeights::default(), true).unwrap_err();
        assert_eq!(err, HumevalError::Incomplete { done: 0, total: 16 });
        let r = he_report(&s, &[], &BTreeMap::new(), &MqmWeights::default(), false).unwrap();
        assert!(!r.complete);
        assert!(r.kappa.is_empty());
        assert!(r.systems.iter().all(|s| s.mqm_penalty == 0.0 && s.sqm_mean.is_none()));
        assert!(r.to_tsv().contains("total\t0\t0"));
    }

    #[test]
    fn complete_error_free_campaign() {
        let mut s = session(&["a", "b"]);
        let recs = fill(&mut s, &[]);
        let r = he_report(&s, &recs, &BTreeMap::new(), &MqmWeights::default(), true).unwrap();
        assert!(r.complete);
        assert!(r.categories.iter().all(|c| c.counts.values().all(|&n| n == 0)));
        assert_eq!(r.categories.iter().map(|c| c.category).collect::<Vec<_>>(), ErrorCategory::ALL);
        assert_eq!(r.kappa.len(), 11);
        assert!(r.kappa.iter().all(|k| k.systems.values().all(|e| e.kappa == 1.0)));
        assert_eq!(r.systems[0].sqm_mean, Some(5.0));
        let tsv = r.to_tsv();
        assert!(tsv.contains("a/b\tgrammar\t1.000\t1.000"));
        let back: HeReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn annotator_totals_and_counts_agree() {
        let mut s = session(&["a", "b", "c"]);
        let recs = fill(&mut s, &["grammar", "omission"]);
        let r = he_report(&s, &recs, &BTreeMap::new(), &MqmWeights::default(), true).unwrap();
        for (i, sys) in ["rnn", "transformer"].iter().enumerate() {
            let by_annotator: u64 = r.annotator_totals.iter().map(|a| a.errors[*sys]).sum();
            let by_category: u64 = r.categories.iter().map(|c| c.counts[*sys]).sum();
            assert_eq!(by_annotator, 24);
            assert_eq!(by_category, r.category_totals[*sys]);
            assert_eq!(r.systems[i].error_count, 24);
        }
        // three annotators give three pairs
        assert_eq!(r.kappa.len(), 33);
    }
}
