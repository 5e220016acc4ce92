//! Config-driven runs, repetitions and sweeps for the VRLM simulator.
//!
//! A run writes `metrics.csv`, `summary.json` and `config_echo.toml` into its
//! `out_dir`. With `repeats > 1` each repetition gets a `rep_K/` directory and
//! an `aggregate.csv` is added. A sweep writes one `sweep_NNN/` directory per
//! grid point plus `sweep_summary.csv`.

pub mod config;
pub mod error;
pub mod output;
pub mod runner;
pub mod sweep;

use std::fmt::Write as _;
use std::path::Path;

pub use config::{parse_config, RunConfig};
pub use error::HarnessError;
pub use runner::{derive_seed, execute, plan, Plan, RunOutcome, RunRecord, Status};

/// All repetitions of one configuration.
#[derive(Debug, Clone)]
pub struct RunSet {
    pub outcomes: Vec<RunOutcome>,
}

impl RunSet {
    /// The first failure, if any.
    pub fn status(&self) -> Status {
        self.outcomes
            .iter()
            .map(|o| o.status)
            .find(|s| *s != Status::Ok)
            .unwrap_or(Status::Ok)
    }
}

fn run_at(cfg: &RunConfig, index: usize) -> Result<RunSet, HarnessError> {
    let plan = runner::plan(cfg)?;
    let dir = cfg.out_dir.as_path();
    output::emit_config(dir, cfg)?;
    let mut outcomes = Vec::with_capacity(cfg.repeats);
    for rep in 0..cfg.repeats {
        let outcome = execute(&plan, derive_seed(cfg.seed, index, rep));
        let rep_dir = if cfg.repeats == 1 {
            dir.to_path_buf()
        } else {
            dir.join(format!("rep_{rep}"))
        };
        output::emit_run(&rep_dir, &outcome, &plan.resolved, cfg)?;
        outcomes.push(outcome);
    }
    if cfg.repeats > 1 {
        let runs: Vec<&[RunRecord]> = outcomes.iter().map(|o| o.records.as_slice()).collect();
        output::write_file(&dir.join("aggregate.csv"), &output::aggregate_csv(&runs))?;
    }
    Ok(RunSet { outcomes })
}

/// Execute a single configuration (with its repetitions) and write its outputs.
pub fn run(cfg: &RunConfig) -> Result<RunSet, HarnessError> {
    if !cfg.sweep.is_empty() {
        return Err(HarnessError::Config(
            "config has [[sweep]] axes; use the sweep command".into(),
        ));
    }
    run_at(cfg, 0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub rep: usize,
    pub label: String,
    /// `ok`, `diverged`, `oracle_failure`, `failed` or `config_error`.
    pub status: String,
    pub seed: Option<u64>,
    pub last: Option<RunRecord>,
    pub best_primal: Option<f64>,
}

pub const SWEEP_COLUMNS: &str =
    "index,rep,overrides,status,seed,t,samples,comms,primal_measure,dual_measure,unit_prox_metric,best_primal_measure";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn sweep_summary_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_COLUMNS}\n");
    let f = |v: Option<f64>| v.map(output::fmt_float).unwrap_or_default();
    for r in rows {
        let rep = r.last.as_ref().map(|x| &x.report);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.index,
            r.rep,
            csv_field(&r.label),
            r.status,
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
            rep.map(|x| x.t.to_string()).unwrap_or_default(),
            rep.map(|x| x.samples.to_string()).unwrap_or_default(),
            rep.map(|x| x.comms.to_string()).unwrap_or_default(),
            f(rep.map(|x| x.primal_measure())),
            f(rep.map(|x| x.dual_measure())),
            f(rep.map(|x| x.unit_prox_metric)),
            f(r.best_primal),
        )
        .unwrap();
    }
    out
}

fn status_name(s: Status) -> String {
    serde_json::to_value(s)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Run every grid point in order. Failures of individual points are recorded
/// in the summary table and the sweep carries on.
pub fn run_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>, HarnessError> {
    let points = sweep::expand(cfg)?;
    output::emit_config(&cfg.out_dir, cfg)?;
    let mut rows = Vec::new();
    for point in &points {
        let label = point.label();
        match run_at(&point.config, point.index) {
            Ok(set) => {
                for (rep, o) in set.outcomes.iter().enumerate() {
                    rows.push(SweepRow {
                        index: point.index,
                        rep,
                        label: label.clone(),
                        status: status_name(o.status),
                        seed: Some(o.seed),
                        last: o.records.last().cloned(),
                        best_primal: output::best_record(&o.records).map(|b| b.primal_measure),
                    });
                }
            }
            Err(HarnessError::Io { path, source }) => {
                return Err(HarnessError::Io { path, source })
            }
            Err(e) => {
                log::warn!("sweep point {} ({label}) failed: {e}", point.index);
                rows.push(SweepRow {
                    index: point.index,
                    rep: 0,
                    label,
                    status: "config_error".into(),
                    seed: None,
                    last: None,
                    best_primal: None,
                });
            }
        }
    }
    output::write_file(
        &cfg.out_dir.join("sweep_summary.csv"),
        &sweep_summary_csv(&rows),
    )?;
    Ok(rows)
}

/// Parse, validate and build the run plan without executing it.
pub fn validate(path: &Path) -> Result<(RunConfig, Vec<Plan>), HarnessError> {
    let cfg = parse_config(path)?;
    let plans = if cfg.sweep.is_empty() {
        vec![plan(&cfg)?]
    } else {
        sweep::expand(&cfg)?
            .iter()
            .map(|p| plan(&p.config))
            .collect::<Result<_, _>>()?
    };
    Ok((cfg, plans))
}
