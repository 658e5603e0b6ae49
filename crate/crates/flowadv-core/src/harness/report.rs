//! Experiment reports: a JSON document with per-example records and
//! aggregates, plus a companion CSV with one row per example. Timestamps
//! live in a separate `meta` object so determinism checks can exclude them.

use crate::attack::evaluate::{AttackKind, Evaluation, ExampleRecord};
use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::fsutil::atomic_write;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    /// Seconds since the Unix epoch at emit time. The only field excluded
    /// from determinism comparisons.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    /// Two decimals, round-half-up.
    pub success_rate_percent: f64,
    pub successes: usize,
    pub evaluated: usize,
    pub skipped_misclassified: usize,
    /// Mean queries over successful attacks; null when none succeeded.
    pub avg_queries: Option<f64>,
    /// Median queries over successful attacks; null when none succeeded.
    pub median_queries: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub meta: ReportMeta,
    pub attack: AttackKind,
    pub seed: u64,
    pub config: RunConfig,
    pub aggregates: Aggregates,
    pub records: Vec<ExampleRecord>,
}

/// Round-half-up to two decimals (1.005 → 1.01, not banker's rounding).
pub fn round2_half_up(v: f64) -> f64 {
    (v * 100.0 + 0.5).floor() / 100.0
}

pub fn aggregates(records: &[ExampleRecord], skipped: usize) -> Result<Aggregates> {
    if records.is_empty() {
        return Err(Error::Domain("cannot aggregate zero records".into()));
    }
    let evaluated = records.len();
    let mut success_queries: Vec<u64> = records
        .iter()
        .filter(|r| r.success)
        .map(|r| r.queries)
        .collect();
    success_queries.sort_unstable();
    let successes = success_queries.len();
    let rate = round2_half_up(100.0 * successes as f64 / evaluated as f64);
    let (avg, median) = if successes == 0 {
        (None, None)
    } else {
        let avg = success_queries.iter().sum::<u64>() as f64 / successes as f64;
        let median = if successes % 2 == 1 {
            success_queries[successes / 2] as f64
        } else {
            (success_queries[successes / 2 - 1] + success_queries[successes / 2]) as f64 / 2.0
        };
        (Some(avg), Some(median))
    };
    Ok(Aggregates {
        success_rate_percent: rate,
        successes,
        evaluated,
        skipped_misclassified: skipped,
        avg_queries: avg,
        median_queries: median,
    })
}

pub fn build_report(
    evaluation: &Evaluation,
    kind: AttackKind,
    seed: u64,
    config: &RunConfig,
) -> Result<Report> {
    let agg = aggregates(&evaluation.records, evaluation.skipped)?;
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(Report {
        meta: ReportMeta { timestamp },
        attack: kind,
        seed,
        config: config.clone(),
        aggregates: agg,
        records: evaluation.records.clone(),
    })
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn csv_bytes(records: &[ExampleRecord]) -> Vec<u8> {
    let mut out = String::from("index,label,success,queries,final_loss,achieved_norm,iterations,flagged_error\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.index,
            r.label,
            r.success,
            r.queries,
            r.final_loss,
            r.achieved_norm,
            r.iterations,
            csv_escape(r.flagged_error.as_deref().unwrap_or("")),
        ));
    }
    out.into_bytes()
}

/// Writes `<stem>.json` and `<stem>.csv`. Re-verifies the embedded aggregates
/// against the records before anything touches disk.
pub fn emit_report(report: &Report, stem: &Path) -> Result<()> {
    let recomputed = aggregates(&report.records, report.aggregates.skipped_misclassified)?;
    if recomputed != report.aggregates {
        return Err(Error::Domain(format!(
            "report aggregates do not match recomputation: {:?} vs {:?}",
            report.aggregates, recomputed
        )));
    }
    let json = serde_json::to_vec_pretty(report)
        .map_err(|e| Error::Domain(format!("report serialization failed: {e}")))?;
    atomic_write(&stem.with_extension("json"), &json)?;
    atomic_write(&stem.with_extension("csv"), &csv_bytes(&report.records))
}

pub fn load_report(path: &Path) -> Result<Report> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        offset: e.column(),
        message: format!("report JSON invalid: {e}"),
    })
}
