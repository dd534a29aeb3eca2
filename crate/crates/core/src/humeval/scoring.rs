use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{AnnotationRecord, ErrorCategory, ErrorTag, HumevalError, SegmentId, Severity};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MqmWeights {
    pub minor: f64,
    pub major: f64,
    pub non_translation: f64,
}

impl Default for MqmWeights {
    fn default() -> Self {
        MqmWeights {
            minor: 1.0,
            major: 10.0,
            non_translation: 25.0,
        }
    }
}

impl MqmWeights {
    pub fn validate(&self) -> Result<(), HumevalError> {
        for (name, w) in [("minor", self.minor), ("major", self.major), ("non_translation", self.non_translation)] {
            if !w.is_finite() || w <= 0.0 {
                return Err(HumevalError::Config(format!("MQM weight {name} must be positive, got {w}")));
            }
        }
        Ok(())
    }

    fn severity(&self, s: Severity) -> f64 {
        match s {
            Severity::Minor => self.minor,
            Severity::Major => self.major,
        }
    }

    /// Penalty of one annotated unit. A non-translation tag covers the
    /// whole segment: the unit costs the non-translation weight, or the sum
    /// of its other tags if that is larger.
    pub fn unit_penalty(&self, tags: &[ErrorTag]) -> f64 {
        let others: f64 = tags
            .iter()
            .filter(|t| t.category != ErrorCategory::NonTranslation)
            .map(|t| self.severity(t.severity))
            .sum();
        if tags.iter().any(|t| t.category == ErrorCategory::NonTranslation) {
            others.max(self.non_translation)
        } else {
            others
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MqmSystemReport {
    pub system: String,
    pub total_penalty: f64,
    /// Number of error tags, severity ignored.
    pub error_count: u64,
    pub category_counts: IndexMap<ErrorCategory, u64>,
    pub penalty_per_segment: f64,
    /// 100 × (1 − penalty / (non-translation weight × segments × annotators)),
    /// clamped to [0, 100].
    pub quality_score: f64,
}

/// Per-system MQM penalties, in the order of `systems`.
pub fn mqm_penalty(
    records: &[AnnotationRecord],
    systems: &[String],
    segments: usize,
    annotators: usize,
    weights: &MqmWeights,
) -> Vec<MqmSystemReport> {
    let units = (segments * annotators) as f64;
    systems
        .iter()
        .map(|system| {
            let mut counts: IndexMap<ErrorCategory, u64> = ErrorCategory::ALL.iter().map(|c| (*c, 0)).collect();
            let mut total = 0.0;
            for r in records.iter().filter(|r| &r.system == system) {
                total += weights.unit_penalty(&r.errors);
                for t in &r.errors {
                    counts[&t.category] += 1;
                }
            }
            let per_segment = if units > 0.0 { total / units } else { 0.0 };
            let ceiling = weights.non_translation * units;
            let quality = if ceiling > 0.0 {
                (100.0 * (1.0 - total / ceiling)).clamp(0.0, 100.0)
            } else {
                100.0
            };
            MqmSystemReport {
                system: system.clone(),
                total_penalty: total,
                error_count: counts.values().sum(),
                category_counts: counts,
                penalty_per_segment: per_segment,
                quality_score: quality,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqmSystem {
    pub mean: f64,
    pub count: u64,
    pub per_annotator: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqmReport {
    pub systems: BTreeMap<String, SqmSystem>,
}

/// Mean SQM rating per system over every (annotator, segment).
pub fn sqm_aggregate(records: &[AnnotationRecord]) -> Result<SqmReport, HumevalError> {
    if records.is_empty() {
        return Err(HumevalError::EmptyInput);
    }
    // (rating sum, count, per-annotator (sum, count))
    type Sums<'a> = (u64, u64, BTreeMap<&'a str, (u64, u64)>);
    let mut sums: BTreeMap<&str, Sums> = BTreeMap::new();
    for r in records {
        let e = sums.entry(&r.system).or_default();
        e.0 += u64::from(r.rating);
        e.1 += 1;
        let a = e.2.entry(&r.annotator).or_default();
        a.0 += u64::from(r.rating);
        a.1 += 1;
    }
    let systems = sums
        .into_iter()
        .map(|(sys, (sum, n, per))| {
            let per_annotator = per
                .into_iter()
                .map(|(a, (s, k))| (a.to_string(), s as f64 / k as f64))
                .collect();
            (
                sys.to_string(),
                SqmSystem {
                    mean: sum as f64 / n as f64,
                    count: n,
                    per_annotator,
                },
            )
        })
        .collect();
    Ok(SqmReport { systems })
}

/// Agreement bands from Cohen's original interpretation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementBand {
    None,
    Slight,
    Fair,
    Moderate,
    Substantial,
    AlmostPerfect,
}

impl AgreementBand {
    pub fn of(kappa: f64) -> Self {
        match kappa {
            k if k <= 0.0 => AgreementBand::None,
            k if k <= 0.20 => AgreementBand::Slight,
            k if k <= 0.40 => AgreementBand::Fair,
            k if k <= 0.60 => AgreementBand::Moderate,
            k if k <= 0.80 => AgreementBand::Substantial,
            _ => AgreementBand::AlmostPerfect,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgreementBand::None => "none",
            AgreementBand::Slight => "slight",
            AgreementBand::Fair => "fair",
            AgreementBand::Moderate => "moderate",
            AgreementBand::Substantial => "substantial",
            AgreementBand::AlmostPerfect => "almost_perfect",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaEntry {
    pub kappa: f64,
    pub both: u64,
    pub only_a: u64,
    pub only_b: u64,
    pub neither: u64,
    pub band: AgreementBand,
}

/// Cohen's kappa over paired binary labels. When chance agreement is 1 the
/// result is 1.0 for perfect observed agreement and 0.0 otherwise.
pub fn cohen_kappa(a: &[bool], b: &[bool]) -> KappaEntry {
    assert_eq!(a.len(), b.len(), "label vectors must be paired");
    let (mut both, mut only_a, mut only_b, mut neither) = (0u64, 0u64, 0u64, 0u64);
    for (&x, &y) in a.iter().zip(b) {
        match (x, y) {
            (true, true) => both += 1,
            (true, false) => only_a += 1,
            (false, true) => only_b += 1,
            (false, false) => neither += 1,
        }
    }
    let n = a.len() as u128;
    let (ya, yb) = (u128::from(both + only_a), u128::from(both + only_b));
    // everything scaled by n² so the arithmetic is exact and symmetric
    let observed = u128::from(both + neither) * n;
    let chance = ya * yb + (n - ya) * (n - yb);
    let kappa = if chance == n * n {
        if observed == n * n {
            1.0
        } else {
            0.0
        }
    } else {
        (observed as f64 - chance as f64) / ((n * n) as f64 - chance as f64)
    };
    KappaEntry {
        kappa,
        both,
        only_a,
        only_b,
        neither,
        band: AgreementBand::of(kappa),
    }
}

/// Kappa per error category for one system; the unit is a segment and the
/// label is whether the annotator tagged at least one error of the category.
pub fn kappa_per_category(
    records: &[AnnotationRecord],
    annotator_a: &str,
    annotator_b: &str,
    system: &str,
    segments: &[SegmentId],
) -> Result<IndexMap<ErrorCategory, KappaEntry>, HumevalError> {
    let lookup: BTreeMap<(&str, SegmentId), &AnnotationRecord> = records
        .iter()
        .filter(|r| r.system == system)
        .map(|r| ((r.annotator.as_str(), r.segment), r))
        .collect();
    let mut units = Vec::with_capacity(segments.len());
    let mut done = 0;
    for &seg in segments {
        let a = lookup.get(&(annotator_a, seg));
        let b = lookup.get(&(annotator_b, seg));
        done += usize::from(a.is_some()) + usize::from(b.is_some());
        if let (Some(a), Some(b)) = (a, b) {
            units.push((*a, *b));
        }
    }
    if units.len() != segments.len() {
        return Err(HumevalError::Incomplete {
            done,
            total: 2 * segments.len(),
        });
    }
    let flags = |r: &AnnotationRecord, c: ErrorCategory| r.errors.iter().any(|t| t.category == c);
    Ok(ErrorCategory::ALL
        .iter()
        .map(|&c| {
            let a: Vec<bool> = units.iter().map(|(x, _)| flags(x, c)).collect();
            let b: Vec<bool> = units.iter().map(|(_, y)| flags(y, c)).collect();
            (c, cohen_kappa(&a, &b))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tag(category: ErrorCategory, severity: Severity) -> ErrorTag {
        ErrorTag { category, severity, span: None }
    }

    fn record(annotator: &str, segment: SegmentId, system: &str, rating: u8, errors: Vec<ErrorTag>) -> AnnotationRecord {
        AnnotationRecord {
            annotator: annotator.into(),
            segment,
            slot: "A".into(),
            system: system.into(),
            rating,
            errors,
            timestamp_ms: 0,
        }
    }

    #[test]
    fn penalty_examples() {
        let w = MqmWeights::default();
        assert_eq!(w.unit_penalty(&[]), 0.0);
        let mut tags = vec![tag(ErrorCategory::Grammar, Severity::Minor); 3];
        tags.push(tag(ErrorCategory::Omission, Severity::Major));
        assert_eq!(w.unit_penalty(&tags), 13.0);
        tags.push(tag(ErrorCategory::NonTranslation, Severity::Minor));
        assert_eq!(w.unit_penalty(&tags), 25.0);
        tags.extend(vec![tag(ErrorCategory::Addition, Severity::Major); 2]);
        assert_eq!(w.unit_penalty(&tags), 33.0);
    }

    #[test]
    fn report_counts_ignore_severity() {
        let recs = vec![
            record("a", 1, "rnn", 3, vec![tag(ErrorCategory::Grammar, Severity::Major), tag(ErrorCategory::Grammar, Severity::Minor)]),
            record("b", 1, "rnn", 4, vec![tag(ErrorCategory::NonTranslation, Severity::Minor), tag(ErrorCategory::Spelling, Severity::Minor)]),
            record("a", 1, "tf", 6, vec![]),
        ];
        let rep = mqm_penalty(&recs, &["rnn".into(), "tf".into(), "none".into()], 1, 2, &MqmWeights::default());
        assert_eq!(rep[0].total_penalty, 11.0 + 25.0);
        assert_eq!(rep[0].error_count, 4);
        assert_eq!(rep[0].category_counts[&ErrorCategory::Grammar], 2);
        assert_eq!(rep[0].category_counts[&ErrorCategory::Spelling], 1);
        assert_eq!(rep[0].penalty_per_segment, 18.0);
        assert_eq!(rep[0].quality_score, 100.0 * (1.0 - 36.0 / 50.0));
        assert_eq!(rep[1].total_penalty, 0.0);
        assert_eq!(rep[1].quality_score, 100.0);
        assert_eq!(rep[2].error_count, 0);
        assert_eq!(rep[0].category_counts.keys().copied().collect::<Vec<_>>(), ErrorCategory::ALL);
    }

    #[test]
    fn sqm_means() {
        assert_eq!(sqm_aggregate(&[]).unwrap_err(), HumevalError::EmptyInput);
        let recs = vec![record("a", 1, "x", 4, vec![]), record("b", 1, "x", 5, vec![]), record("a", 2, "y", 6, vec![])];
        let rep = sqm_aggregate(&recs).unwrap();
        assert_eq!(rep.systems["x"].mean, 4.5);
        assert_eq!(rep.systems["x"].per_annotator["b"], 5.0);
        assert_eq!(rep.systems["y"].mean, 6.0);
    }

    fn flags(n: usize, on: &[usize]) -> Vec<bool> {
        (0..n).map(|i| on.contains(&i)).collect()
    }

    #[test]
    fn kappa_fixtures() {
        let k = cohen_kappa(&flags(20, &[3]), &flags(20, &[]));
        assert_eq!(k.kappa, 0.0);
        assert_eq!((k.both, k.only_a, k.only_b, k.neither), (0, 1, 0, 19));
        assert_eq!(cohen_kappa(&flags(20, &[0, 1, 2, 3]), &flags(20, &[])).kappa, 0.0);
        assert_eq!(cohen_kappa(&flags(20, &[]), &flags(20, &[])).kappa, 1.0);
        assert_eq!(cohen_kappa(&flags(20, &[2, 5]), &flags(20, &[2, 5])).kappa, 1.0);
        assert_eq!(cohen_kappa(&flags(20, &(0..20).collect::<Vec<_>>()), &flags(20, &[])).kappa, 0.0);
        // 2x2 hand example: both 1, only_a 1, only_b 1, neither 1 -> p_o 0.5, p_e 0.5
        assert_eq!(cohen_kappa(&flags(4, &[0, 1]), &flags(4, &[0, 2])).kappa, 0.0);
        assert_eq!(cohen_kappa(&flags(2, &[0]), &flags(2, &[1])).kappa, -1.0);
        assert_eq!(AgreementBand::of(0.7), AgreementBand::Substantial);
        assert_eq!(AgreementBand::of(0.0), AgreementBand::None);
        assert_eq!(AgreementBand::of(1.0), AgreementBand::AlmostPerfect);
    }

    #[test]
    fn per_category_requires_completeness() {
        let recs = vec![
            record("a", 1, "x", 3, vec![tag(ErrorCategory::Spelling, Severity::Minor)]),
            record("b", 1, "x", 3, vec![]),
            record("a", 2, "x", 3, vec![]),
        ];
        assert_eq!(
            kappa_per_category(&recs, "a", "b", "x", &[1, 2]).unwrap_err(),
            HumevalError::Incomplete { done: 3, total: 4 }
        );
        let table = kappa_per_category(&recs, "a", "b", "x", &[1]).unwrap();
        assert_eq!(table.len(), 11);
        assert_eq!(table[&ErrorCategory::Spelling].kappa, 0.0);
        assert_eq!(table[&ErrorCategory::Grammar].kappa, 1.0);
    }

    proptest! {
        #[test]
        fn kappa_bounded_and_symmetric(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 0..40)) {
            let a: Vec<bool> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            let ab = cohen_kappa(&a, &b);
            let ba = cohen_kappa(&b, &a);
            prop_assert!((-1.0..=1.0).contains(&ab.kappa));
            prop_assert_eq!(ab.kappa, ba.kappa);
            prop_assert_eq!(ab.both + ab.only_a + ab.only_b + ab.neither, a.len() as u64);
            prop_assert_eq!(cohen_kappa(&a, &a).kappa, 1.0);
        }

        #[test]
        fn penalty_monotone(
            base in proptest::collection::vec((0usize..11, any::<bool>()), 0..8),
            extra in (0usize..11, any::<bool>()),
        ) {
            let w = MqmWeights::default();
            let mk = |(c, major): (usize, bool)| tag(ErrorCategory::ALL[c], if major { Severity::Major } else { Severity::Minor });
            let mut tags: Vec<ErrorTag> = base.iter().copied().map(mk).collect();
            let before = w.unit_penalty(&tags);
            tags.push(mk(extra));
            prop_assert!(w.unit_penalty(&tags) >= before);
            let has_nt = tags.iter().any(|t| t.category == ErrorCategory::NonTranslation);
            if let Some(i) = tags.iter().position(|t| t.severity == Severity::Minor && t.category != ErrorCategory::NonTranslation) {
                let before = w.unit_penalty(&tags);
                tags[i].severity = Severity::Major;
                let after = w.unit_penalty(&tags);
                prop_assert!(after >= before);
                if !has_nt {
                    prop_assert_eq!(after - before, 9.0);
                }
            }
        }
    }
}
