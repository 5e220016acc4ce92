//! Turning a validated config into a problem, a topology and engine settings,
//! and executing runs.

use std::time::Instant;

use serde::Serialize;
use vrlm_core::engine::{self, InvariantReport};
use vrlm_core::problems::data::{load_dataset, synthetic_blobs, Format};
use vrlm_core::problems::{mix_seed, DroLogistic, QuadraticNcsc, QuadraticParams};
use vrlm_core::topology::column_mean;
use vrlm_core::{
    metrics, Components, Engine, EngineConfig, Error, EstimatorKind, MixingMatrix, Problem,
    StationarityReport, StepSizes,
};

use crate::config::{ProblemConfig, RunConfig, StepMode, TopologyKind, VrKind};
use crate::error::HarnessError;

/// Constants the run actually uses, echoed into the summary.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub smoothness: f64,
    pub mu: f64,
    pub kappa: f64,
    pub rho: f64,
    pub coupling_l: f64,
    pub variance_bound: f64,
    pub steps: StepSizes,
    pub estimator: EstimatorKind,
    pub initial_batch: usize,
}

pub struct Plan {
    pub problem: Box<dyn Problem>,
    pub mixing: MixingMatrix,
    pub engine: EngineConfig,
    pub resolved: Resolved,
    pub iterations: usize,
    pub metric_every: usize,
    pub record_wall_time: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Diverged,
    OracleFailure,
    Failed,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Diverged => 2,
            Status::OracleFailure => 3,
            Status::Failed => 1,
        }
    }

    fn of(err: &Error) -> Status {
        match err {
            Error::Diverged { .. } => Status::Diverged,
            Error::OracleFailure { .. } => Status::OracleFailure,
            _ => Status::Failed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    #[serde(flatten)]
    pub report: StationarityReport,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub status: Status,
    pub error: Option<String>,
    pub records: Vec<RunRecord>,
    pub invariants: Option<InvariantReport>,
    /// Average primal iterate of the last valid state.
    pub xbar: Vec<f64>,
}

/// Engine seed of repetition `rep` of sweep point `index`.
pub fn derive_seed(master: u64, index: usize, rep: usize) -> u64 {
    mix_seed(&[master, index as u64, rep as u64])
}

fn build_problem(cfg: &RunConfig) -> Result<Box<dyn Problem>, HarnessError> {
    let m = cfg.topology.m;
    Ok(match &cfg.problem {
        ProblemConfig::Quadratic(q) => Box::new(QuadraticNcsc::random(&QuadraticParams {
            agents: m,
            d1: q.d1,
            d2: q.d2,
            mu: q.mu,
            curvature: q.curvature,
            coupling: q.coupling,
            primal_het: q.primal_het,
            dual_het: q.dual_het,
            linear: q.linear,
            components: q.n,
            noise: q.noise,
            sigma2: q.sigma2,
            seed: q.seed,
            g: q.g.clone(),
            h: q.h.clone(),
        })?),
        ProblemConfig::Dro(d) => {
            let data = match &d.data {
                Some(path) => {
                    let data = load_dataset(path, Format::from_path(path))?;
                    if data.dim() != d.d1 {
                        return Err(HarnessError::Config(format!(
                            "dataset {} has {} features but problem.d1 = {}",
                            path.display(),
                            data.dim(),
                            d.d1
                        )));
                    }
                    data
                }
                None => synthetic_blobs(d.points, d.d1, d.separation, d.data_seed).0,
            };
            let shards = data.partition(m, d.partition_seed)?;
            Box::new(DroLogistic::with_variance(
                &shards,
                d.mu,
                d.lambda_reg,
                d.sigma2,
            )?)
        }
    })
}

fn build_mixing(cfg: &RunConfig) -> Result<MixingMatrix, HarnessError> {
    let t = &cfg.topology;
    let base = match t.kind {
        TopologyKind::Ring => MixingMatrix::ring(t.m)?,
        TopologyKind::Complete => MixingMatrix::complete(t.m)?,
        TopologyKind::Custom => {
            let rows = t.weights.as_ref().expect("validated custom weights");
            let w = nalgebra::DMatrix::from_fn(t.m, t.m, |i, j| rows[i][j]);
            MixingMatrix::validate(w)?
        }
    };
    Ok(if t.mixing_power > 1 {
        base.power(t.mixing_power)?
    } else {
        base
    })
}

/// Build everything a run needs, including the problem-dependent checks.
pub fn plan(cfg: &RunConfig) -> Result<Plan, HarnessError> {
    cfg.validate()?;
    let problem = build_problem(cfg)?;
    let mixing = build_mixing(cfg)?;
    let l = problem.smoothness();
    let mu = problem.strong_concavity();
    let rho = mixing.rho();
    let sigma2 = match cfg.steps.sigma {
        Some(s) => s * s,
        None => problem.variance_bound(),
    };
    let vr = &cfg.vr;
    let steps_cfg = &cfg.steps;

    let estimator = match vr.kind {
        VrKind::Spider => {
            let (q, s1, s2) = (vr.q.unwrap(), vr.s1.unwrap(), vr.s2.unwrap());
            if let (StepMode::Theory, Components::Finite(n)) =
                (steps_cfg.mode, problem.components())
            {
                if s1 != n {
                    return Err(HarnessError::Config(format!(
                        "finite-sum SPIDER with theory steps needs S1 = n = {n}, got S1 = {s1}"
                    )));
                }
            }
            EstimatorKind::Spider { q, s1, s2 }
        }
        VrKind::Storm => EstimatorKind::Storm {
            beta: cfg.beta().unwrap_or(1.0),
            batch: vr.batch.unwrap_or(1),
        },
        VrKind::Plain => EstimatorKind::Plain {
            batch: vr.batch.unwrap_or(1),
        },
    };

    let (steps, estimator, theory_s0) = match steps_cfg.mode {
        StepMode::Manual => (
            StepSizes {
                eta_x: steps_cfg.eta_x.unwrap(),
                eta_y: steps_cfg.eta_y.unwrap(),
                // Λ stays zero under SGDA, so any positive value will do.
                eta_lambda: steps_cfg.eta_lambda.unwrap_or(1.0),
            },
            estimator,
            None,
        ),
        StepMode::Theory => {
            let (theory, estimator, s0) = match estimator {
                EstimatorKind::Spider { .. } => {
                    (engine::theory_steps_spider(l, mu, rho)?, estimator, None)
                }
                EstimatorKind::Storm { batch, .. } => {
                    let theory = match cfg.beta() {
                        Some(beta) => engine::storm_steps_for_beta(l, mu, rho, beta)?,
                        None => {
                            if sigma2.is_nan() || sigma2 <= 0.0 {
                                return Err(HarnessError::Config(
                                    "STORM theory steps from eps need a positive variance; set steps.sigma".into(),
                                ));
                            }
                            engine::theory_steps_storm(
                                l,
                                mu,
                                rho,
                                sigma2.sqrt(),
                                steps_cfg.eps.unwrap(),
                            )?
                        }
                    };
                    let beta = theory.beta.expect("STORM theory sets β");
                    let s0 = engine::storm_initial_batch(l, mu, rho, beta, sigma2);
                    (theory, EstimatorKind::Storm { beta, batch }, Some(s0))
                }
                EstimatorKind::Plain { .. } => unreachable!("rejected by validation"),
            };
            let s = theory.steps;
            let k = steps_cfg.scale;
            (
                StepSizes {
                    eta_x: k * s.eta_x,
                    eta_y: k * s.eta_y,
                    eta_lambda: k * s.eta_lambda,
                },
                estimator,
                s0,
            )
        }
    };
    steps.validate()?;
    estimator.validate()?;

    let initial_batch = vr.s0.or(theory_s0).unwrap_or(match estimator {
        EstimatorKind::Spider { s1, .. } => s1,
        EstimatorKind::Storm { batch, .. } | EstimatorKind::Plain { batch } => batch,
    });
    let coupling_l = cfg.problem.coupling_l().unwrap_or(l);
    let engine_cfg = EngineConfig {
        method: cfg.method,
        estimator,
        initial_batch,
        steps,
        coupling_l: cfg.problem.coupling_l(),
        seed: cfg.seed,
        execution: cfg.execution,
        mixing_rounds: cfg.topology.mixing_power as u64,
        monitor: cfg.check_invariants,
    };
    let resolved = Resolved {
        smoothness: l,
        mu,
        kappa: l / mu,
        rho,
        coupling_l,
        variance_bound: problem.variance_bound(),
        steps,
        estimator,
        initial_batch,
    };
    Ok(Plan {
        problem,
        mixing,
        engine: engine_cfg,
        resolved,
        iterations: cfg.iterations,
        metric_every: cfg.metric_every,
        record_wall_time: cfg.record_wall_time,
    })
}

/// Run the plan once with the given engine seed, keeping every record up to
/// any failure.
pub fn execute(plan: &Plan, seed: u64) -> RunOutcome {
    let mut cfg = plan.engine.clone();
    cfg.seed = seed;
    let mut records = Vec::new();
    let mut invariants = None;
    let mut xbar = Vec::new();
    let start = Instant::now();
    let result = Engine::new(plan.problem.as_ref(), &plan.mixing, cfg).and_then(|mut engine| {
        let out = engine.run(plan.iterations, plan.metric_every, |e| {
            let report = metrics::report(e)?;
            let wall_time_ms = if plan.record_wall_time {
                start.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            };
            records.push(RunRecord {
                report,
                wall_time_ms,
            });
            Ok(())
        });
        invariants = engine.invariants().cloned();
        xbar = column_mean(&engine.state().x).iter().copied().collect();
        out
    });
    let (status, error) = match result {
        Ok(()) => (Status::Ok, None),
        Err(e) => {
            log::warn!("run with seed {seed} stopped: {e}");
            (Status::of(&e), Some(e.to_string()))
        }
    };
    RunOutcome {
        seed,
        status,
        error,
        records,
        invariants,
        xbar,
    }
}
