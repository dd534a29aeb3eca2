//! Command-line front end and HTTP annotation service for lowmt.

pub mod commands;
pub mod server;

use std::collections::BTreeMap;
use std::path::Path;

use lowmt_core::humeval::{he_report, AnnotationRecord, AnnotationSession, HumevalError, MqmWeights};
use lowmt_core::metrics::MetricReport;

pub const METRICS_DIR: &str = "metrics";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    #[default]
    Json,
    Tsv,
}

/// Automatic-metric reports stored alongside a campaign as
/// `metrics/<system>.json`, as written by `lowmt metrics score --json`.
pub fn load_campaign_metrics(root: &Path) -> anyhow::Result<BTreeMap<String, MetricReport>> {
    let dir = root.join(METRICS_DIR);
    let mut out = BTreeMap::new();
    let entries = match std::fs::read_dir(&dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(anyhow::anyhow!("{}: {e}", dir.display())),
    };
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let Some(system) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        let text = std::fs::read_to_string(&path)?;
        let report: MetricReport =
            serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        out.insert(system.to_string(), report);
    }
    Ok(out)
}

/// The single rendering path shared by `lowmt humeval report` and
/// `GET /report`.
pub fn render_report(
    session: &AnnotationSession,
    records: &[AnnotationRecord],
    metrics: &BTreeMap<String, MetricReport>,
    format: ReportFormat,
    strict: bool,
) -> Result<String, HumevalError> {
    let report = he_report(session, records, metrics, &MqmWeights::default(), strict)?;
    Ok(match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Tsv => report.to_tsv(),
    })
}
