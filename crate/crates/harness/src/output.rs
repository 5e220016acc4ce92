//! Files written for each run: `metrics.csv`, `summary.json`, `config_echo.toml`,
//! and for repetitions an `aggregate.csv` of per-iteration mean and sample
//! standard deviation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use vrlm_core::engine::InvariantReport;

use crate::config::RunConfig;
use crate::error::{io_err, HarnessError};
use crate::runner::{Resolved, RunOutcome, RunRecord, Status};

pub const METRIC_COLUMNS: [&str; 13] = [
    "t",
    "samples",
    "comms",
    "prox_grad_norm2",
    "consensus_term",
    "lambda_grad_norm2",
    "y_gap",
    "tracking_residual",
    "v_consensus",
    "objective_estimate",
    "wall_time_ms",
    "unit_prox_metric",
    "per_agent_metric",
];

/// Real-valued columns, in CSV order.
const FLOAT_COLUMNS: [&str; 10] = [
    "prox_grad_norm2",
    "consensus_term",
    "lambda_grad_norm2",
    "y_gap",
    "tracking_residual",
    "v_consensus",
    "objective_estimate",
    "wall_time_ms",
    "unit_prox_metric",
    "per_agent_metric",
];

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn floats(r: &RunRecord) -> [f64; 10] {
    let s = &r.report;
    [
        s.prox_grad_norm2,
        s.consensus_term,
        s.lambda_grad_norm2,
        s.y_gap,
        s.tracking_residual,
        s.v_consensus,
        s.objective_estimate,
        r.wall_time_ms,
        s.unit_prox_metric,
        s.per_agent_metric,
    ]
}

pub fn metrics_csv(records: &[RunRecord]) -> String {
    let mut out = METRIC_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        let s = &r.report;
        write!(out, "{},{},{}", s.t, s.samples, s.comms).unwrap();
        for v in floats(r) {
            out.push(',');
            out.push_str(&fmt_float(v));
        }
        out.push('\n');
    }
    out
}

/// Per-iteration mean and sample standard deviation over the runs that
/// logged that iteration.
pub fn aggregate_csv(runs: &[&[RunRecord]]) -> String {
    let mut out = String::from("t,runs");
    for c in FLOAT_COLUMNS {
        write!(out, ",{c}_mean,{c}_std").unwrap();
    }
    out.push('\n');
    let mut ts: Vec<usize> = runs
        .iter()
        .flat_map(|r| r.iter().map(|x| x.report.t))
        .collect();
    ts.sort_unstable();
    ts.dedup();
    for t in ts {
        let rows: Vec<[f64; 10]> = runs
            .iter()
            .filter_map(|r| r.iter().find(|x| x.report.t == t))
            .map(floats)
            .collect();
        let n = rows.len() as f64;
        write!(out, "{t},{}", rows.len()).unwrap();
        for j in 0..FLOAT_COLUMNS.len() {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let std = if rows.len() > 1 {
                (rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                f64::NAN
            };
            write!(out, ",{},{}", fmt_float(mean), fmt_float(std)).unwrap();
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Serialize)]
pub struct BestRecord {
    /// Smallest first stationarity quantity seen.
    pub primal_measure: f64,
    pub record: RunRecord,
}

#[derive(Debug, Serialize)]
pub struct RunSummary<'a> {
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<&'a str>,
    pub seed: u64,
    pub records: usize,
    pub final_record: Option<&'a RunRecord>,
    pub best: Option<BestRecord>,
    pub invariants: Option<&'a InvariantReport>,
    pub invariants_ok: Option<bool>,
    pub final_xbar: &'a [f64],
    pub resolved: &'a Resolved,
    pub config: &'a RunConfig,
}

pub fn best_record(records: &[RunRecord]) -> Option<BestRecord> {
    records
        .iter()
        .filter(|r| r.report.primal_measure().is_finite())
        .min_by(|a, b| {
            a.report
                .primal_measure()
                .total_cmp(&b.report.primal_measure())
        })
        .map(|r| BestRecord {
            primal_measure: r.report.primal_measure(),
            record: r.clone(),
        })
}

pub fn summary_json(outcome: &RunOutcome, resolved: &Resolved, config: &RunConfig) -> String {
    let summary = RunSummary {
        status: outcome.status,
        error: outcome.error.as_deref(),
        seed: outcome.seed,
        records: outcome.records.len(),
        final_record: outcome.records.last(),
        best: best_record(&outcome.records),
        invariants: outcome.invariants.as_ref(),
        invariants_ok: outcome.invariants.as_ref().map(InvariantReport::ok),
        final_xbar: &outcome.xbar,
        resolved,
        config,
    };
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    text
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

/// `metrics.csv` and `summary.json` of one run inside `dir`.
pub fn emit_run(
    dir: &Path,
    outcome: &RunOutcome,
    resolved: &Resolved,
    config: &RunConfig,
) -> Result<(), HarnessError> {
    write_file(&dir.join("metrics.csv"), &metrics_csv(&outcome.records))?;
    write_file(
        &dir.join("summary.json"),
        &summary_json(outcome, resolved, config),
    )
}

pub fn emit_config(dir: &Path, config: &RunConfig) -> Result<(), HarnessError> {
    write_file(&dir.join("config_echo.toml"), &config.to_toml())
}
