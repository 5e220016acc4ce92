//! The synchronous swarm iteration, its invariant monitor, and the
//! theoretical step-size calculators.
//!
//! State at step `t` holds `X, Y, Λ` together with the estimates `D` and the
//! directions `V` computed at `(X, Y, Λ)`. One call to [`Engine::step`]
//! performs
//!
//! ```text
//! Λ⁺  = Λ + (L η_Λ / 2√m) (W − I) Y
//! X⁺  = prox_{η_x g}(W X − η_x V_x)
//! Y⁺  = prox_{η_y h}(Y + η_y V_y)
//! D⁺  = per-agent estimator at (X⁺, Y⁺)
//! V_x⁺ = W (V_x + D_x⁺ − D_x)
//! V_y⁺ = D_y⁺ − (L √m / 2) (W − I)ᵀ Λ⁺
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_mut, Execution};
use crate::problems::{Grad, Problem};
use crate::prox::prox_rows;
use crate::topology::{column_mean, consensus_error, MixingMatrix};
use crate::vr::{AgentEstimator, EstimatorKind};

/// Any state norm above this aborts the run.
pub const DIVERGENCE_NORM: f64 = 1e12;
pub const TRACKING_TOL: f64 = 1e-10;
pub const LAMBDA_MEAN_TOL: f64 = 1e-12;
pub const CONSENSUS_SLACK: f64 = 1e-9;
pub const FEASIBILITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Vrlm,
    /// Prox-SGDA with gradient tracking on `x` and gossip on `y`.
    Sgda,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub eta_x: f64,
    pub eta_y: f64,
    pub eta_lambda: f64,
}

impl StepSizes {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta_x", self.eta_x),
            ("eta_y", self.eta_y),
            ("eta_lambda", self.eta_lambda),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Precondition(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Step sizes from the convergence analysis plus the constants they use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheorySteps {
    pub steps: StepSizes,
    pub kappa: f64,
    /// Smoothness of the primal function `P`.
    pub l_p: f64,
    /// Smoothness of the multiplier function `Q`; equal to `l_p`.
    pub l_q: f64,
    pub beta: Option<f64>,
    /// STORM initial batch for the given variance, if one was supplied.
    pub initial_batch: Option<usize>,
    /// Per-step variance `σ²/S_t` with `S_t = 1`.
    pub upsilon: Option<f64>,
}

fn check_constants(l: f64, mu: f64, rho: f64) -> Result<()> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Precondition(format!("μ must be positive, got {mu}")));
    }
    if !(l >= mu && l.is_finite()) {
        return Err(Error::Precondition(format!(
            "L must satisfy L ≥ μ, got L = {l}, μ = {mu}"
        )));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Precondition(format!(
            "ρ must lie in [0, 1), got {rho}"
        )));
    }
    Ok(())
}

/// `L√(4κ² + 1)`.
pub fn primal_smoothness(l: f64, mu: f64) -> f64 {
    let kappa = l / mu;
    l * (4.0 * kappa * kappa + 1.0).sqrt()
}

pub fn theory_steps_spider(l: f64, mu: f64, rho: f64) -> Result<TheorySteps> {
    check_constants(l, mu, rho)?;
    let k = l / mu;
    let k2 = k * k;
    let l_p = primal_smoothness(l, mu);
    let gap2 = (1.0 - rho).powi(2);
    let eta_x = (gap2 / (180.0 * l_p)).min(1.0 / (20.0 * (l + 1.0) * (12.0 * k2 + 2.0 * k + 5.0)));
    let c = 12.0 * k2 + k + 1.0;
    let eta_lambda = (5.0 * l_p * gap2 / (24.0 * l * l * c)).min(
        1.0 / (2.0 * l_p
            + 128.0 * l * k2
            + (l + 1.0) * (20.0 * k2 + k + 1.0) / 2.0
            + 4.0 * l * l * c / (30.0 * l_p)),
    );
    Ok(TheorySteps {
        steps: StepSizes {
            eta_x,
            eta_y: 1.0 / (4.0 * l),
            eta_lambda,
        },
        kappa: k,
        l_p,
        l_q: l_p,
        beta: None,
        initial_batch: None,
        upsilon: None,
    })
}

/// `β = ε² / (1440 σ² (24κ² + 7κ + 4))`.
pub fn storm_beta(l: f64, mu: f64, sigma: f64, eps: f64) -> f64 {
    let k = l / mu;
    eps * eps / (1440.0 * sigma * sigma * (24.0 * k * k + 7.0 * k + 4.0))
}

/// STORM step sizes for a given momentum parameter.
pub fn storm_steps_for_beta(l: f64, mu: f64, rho: f64, beta: f64) -> Result<TheorySteps> {
    check_constants(l, mu, rho)?;
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Precondition(format!(
            "β must lie in (0, 1], got {beta}"
        )));
    }
    let k = l / mu;
    let k2 = k * k;
    let sb = beta.sqrt();
    let gap2 = (1.0 - rho).powi(2);
    let eta_x = (k * gap2 / (40.0 * l * (24.0 * k2 + 8.0 * k + 5.0)))
        .min(sb / (48.0 * (l + 1.0) * (24.0 * k2 + 7.0 * k + 4.0)));
    let eta_lambda =
        (gap2 / (4.0 * l * (20.0 * k + 3.0))).min(sb / (4.0 * (l + 1.0) * (52.0 * k2 + k + 1.0)));
    let l_p = primal_smoothness(l, mu);
    Ok(TheorySteps {
        steps: StepSizes {
            eta_x,
            eta_y: sb / (4.0 * std::f64::consts::SQRT_2 * l),
            eta_lambda,
        },
        kappa: k,
        l_p,
        l_q: l_p,
        beta: Some(beta),
        initial_batch: None,
        upsilon: None,
    })
}

/// `S₀ = ⌈(1/(√β L) + 1/(4(1−ρ)²κL)) σ²⌉`, at least 1.
pub fn storm_initial_batch(l: f64, mu: f64, rho: f64, beta: f64, sigma2: f64) -> usize {
    let k = l / mu;
    let s0 = (1.0 / (beta.sqrt() * l) + 1.0 / (4.0 * (1.0 - rho).powi(2) * k * l)) * sigma2;
    (s0.ceil() as usize).max(1)
}

pub fn theory_steps_storm(l: f64, mu: f64, rho: f64, sigma: f64, eps: f64) -> Result<TheorySteps> {
    check_constants(l, mu, rho)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Precondition(format!(
            "σ must be positive, got {sigma}"
        )));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Precondition(format!(
            "ε must be positive, got {eps}"
        )));
    }
    if eps > sigma * (1.0 - rho).powi(2) {
        log::warn!(
            "ε = {eps} exceeds σ(1−ρ)² = {}; step sizes lie outside their analysed regime",
            sigma * (1.0 - rho).powi(2)
        );
    }
    let beta = storm_beta(l, mu, sigma, eps);
    let mut out = storm_steps_for_beta(l, mu, rho, beta)?;
    out.initial_batch = Some(storm_initial_batch(l, mu, rho, beta, sigma * sigma));
    out.upsilon = Some(sigma * sigma);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub method: Method,
    pub estimator: EstimatorKind,
    /// Batch size of the initial estimate.
    pub initial_batch: usize,
    pub steps: StepSizes,
    /// Replaces the problem's `L` inside the multiplier coupling.
    pub coupling_l: Option<f64>,
    pub seed: u64,
    pub execution: Execution,
    /// Neighbor exchanges per mixing multiplication.
    pub mixing_rounds: u64,
    pub monitor: bool,
}

impl EngineConfig {
    pub fn new(estimator: EstimatorKind, initial_batch: usize, steps: StepSizes) -> Self {
        EngineConfig {
            method: Method::Vrlm,
            estimator,
            initial_batch,
            steps,
            coupling_l: None,
            seed: 0,
            execution: Execution::default(),
            mixing_rounds: 1,
            monitor: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub dx: DMatrix<f64>,
    pub dy: DMatrix<f64>,
    pub vx: DMatrix<f64>,
    pub vy: DMatrix<f64>,
    pub t: usize,
    /// Stochastic gradients drawn per agent so far.
    pub samples: u64,
    /// Neighbor communication rounds so far.
    pub comms: u64,
}

/// Worst observed values of the per-iteration structural checks.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InvariantReport {
    pub checks: usize,
    pub max_tracking_rel: f64,
    pub tracking_violations: usize,
    pub max_lambda_mean_rel: f64,
    pub lambda_violations: usize,
    pub infeasible_rows: usize,
    /// Largest `lhs / rhs` of the consensus recursion.
    pub max_consensus_ratio: f64,
    pub consensus_violations: usize,
}

impl InvariantReport {
    pub fn ok(&self) -> bool {
        self.tracking_violations == 0
            && self.lambda_violations == 0
            && self.infeasible_rows == 0
            && self.consensus_violations == 0
    }
}

#[derive(Debug, Clone, Default)]
struct Monitor {
    report: InvariantReport,
    tracking_scale: f64,
    lambda_floor: f64,
}

pub struct Engine<'a> {
    problem: &'a dyn Problem,
    mixing: &'a MixingMatrix,
    cfg: EngineConfig,
    coupling_l: f64,
    state: SwarmState,
    estimators: Vec<AgentEstimator>,
    monitor: Option<Monitor>,
}

impl<'a> Engine<'a> {
    /// Start from `X = 0` and every `y_i` at the center of `dom h`.
    pub fn new(
        problem: &'a dyn Problem,
        mixing: &'a MixingMatrix,
        cfg: EngineConfig,
    ) -> Result<Self> {
        let m = problem.agents();
        let x0 = DMatrix::zeros(m, problem.primal_dim());
        let center = problem.dual_reg().center(problem.dual_dim());
        let y0 = DMatrix::from_fn(m, problem.dual_dim(), |_, j| center[j]);
        Self::with_initial(problem, mixing, cfg, x0, y0)
    }

    pub fn with_initial(
        problem: &'a dyn Problem,
        mixing: &'a MixingMatrix,
        cfg: EngineConfig,
        x0: DMatrix<f64>,
        y0: DMatrix<f64>,
    ) -> Result<Self> {
        let m = problem.agents();
        let (d1, d2) = (problem.primal_dim(), problem.dual_dim());
        if mixing.agents() != m {
            return Err(Error::Dimension {
                context: "mixing matrix",
                expected: m,
                got: mixing.agents(),
            });
        }
        if x0.shape() != (m, d1) {
            return Err(Error::Dimension {
                context: "initial X columns",
                expected: d1,
                got: x0.ncols(),
            });
        }
        if y0.shape() != (m, d2) {
            return Err(Error::Dimension {
                context: "initial Y columns",
                expected: d2,
                got: y0.ncols(),
            });
        }
        for i in 0..m {
            if !problem
                .dual_reg()
                .contains(&y0.row(i).transpose(), FEASIBILITY_TOL)
            {
                return Err(Error::Precondition(format!(
                    "initial y_{i} lies outside dom h"
                )));
            }
        }
        cfg.steps.validate()?;
        cfg.estimator.validate()?;
        if cfg.initial_batch == 0 {
            return Err(Error::Precondition("initial batch must be ≥ 1".into()));
        }
        let coupling_l = cfg.coupling_l.unwrap_or_else(|| problem.smoothness());
        if !(coupling_l > 0.0 && coupling_l.is_finite()) {
            return Err(Error::Precondition(format!(
                "coupling L must be positive, got {coupling_l}"
            )));
        }
        let mut estimators = (0..m)
            .map(|i| AgentEstimator::new(cfg.estimator, i, cfg.seed))
            .collect::<Result<Vec<_>>>()?;
        let s0 = cfg.initial_batch;
        let d0 = map_mut(cfg.execution, &mut estimators, |i, e| {
            e.init(problem, &x0.row(i).transpose(), &y0.row(i).transpose(), s0)
        })
        .into_iter()
        .collect::<Result<Vec<Grad>>>()?;
        let (dx, dy) = stack(&d0, d1, d2);
        let state = SwarmState {
            x: x0,
            y: y0,
            lambda: DMatrix::zeros(m, d2),
            vx: dx.clone(),
            vy: dy.clone(),
            dx,
            dy,
            t: 0,
            samples: s0 as u64,
            comms: 0,
        };
        let monitor = cfg.monitor.then(Monitor::default);
        let mut engine = Engine {
            problem,
            mixing,
            cfg,
            coupling_l,
            state,
            estimators,
            monitor,
        };
        engine.check_divergence(&engine.state.clone())?;
        if let Some(mut mon) = engine.monitor.take() {
            mon.observe_start(&engine.state, engine.lambda_gain());
            engine.monitor = Some(mon);
        }
        Ok(engine)
    }

    pub fn state(&self) -> &SwarmState {
        &self.state
    }

    pub fn problem(&self) -> &'a dyn Problem {
        self.problem
    }

    pub fn mixing(&self) -> &'a MixingMatrix {
        self.mixing
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    /// The `L` used in the multiplier coupling.
    pub fn coupling_l(&self) -> f64 {
        self.coupling_l
    }

    pub fn invariants(&self) -> Option<&InvariantReport> {
        self.monitor.as_ref().map(|m| &m.report)
    }

    /// `L η_Λ / (2√m)`.
    fn lambda_gain(&self) -> f64 {
        self.coupling_l * self.cfg.steps.eta_lambda / (2.0 * (self.problem.agents() as f64).sqrt())
    }

    /// `L √m / 2`.
    fn shift_gain(&self) -> f64 {
        self.coupling_l * (self.problem.agents() as f64).sqrt() / 2.0
    }

    /// Advance one synchronous round.
    pub fn step(&mut self) -> Result<()> {
        let s = &self.state;
        let w = self.mixing;
        let StepSizes { eta_x, eta_y, .. } = self.cfg.steps;
        let p = self.problem;

        let lambda = match self.cfg.method {
            Method::Vrlm => &s.lambda + w.laplacian_apply(&s.y) * self.lambda_gain(),
            Method::Sgda => s.lambda.clone(),
        };
        let x = prox_rows(p.primal_reg(), eta_x, &(w.mix(&s.x) - &s.vx * eta_x))?;
        let y = match self.cfg.method {
            Method::Vrlm => prox_rows(p.dual_reg(), eta_y, &(&s.y + &s.vy * eta_y))?,
            Method::Sgda => prox_rows(p.dual_reg(), eta_y, &(w.mix(&s.y) + &s.dy * eta_y))?,
        };

        let t = s.t + 1;
        let d = map_mut(self.cfg.execution, &mut self.estimators, |i, e| {
            e.step(p, t, &x.row(i).transpose(), &y.row(i).transpose())
        })
        .into_iter()
        .collect::<Result<Vec<Grad>>>()?;
        let (dx, dy) = stack(&d, p.primal_dim(), p.dual_dim());

        let vx = w.mix(&(&s.vx + &dx - &s.dx));
        let vy = match self.cfg.method {
            Method::Vrlm => &dy - w.laplacian_t_apply(&lambda) * self.shift_gain(),
            Method::Sgda => dy.clone(),
        };
        let next = SwarmState {
            x,
            y,
            lambda,
            dx,
            dy,
            vx,
            vy,
            t,
            samples: s.samples + self.cfg.estimator.batch_at(t) as u64,
            comms: s.comms + self.cfg.mixing_rounds,
        };
        self.check_divergence(&next)?;
        if let Some(mut mon) = self.monitor.take() {
            mon.observe_step(
                &self.state,
                &next,
                self.mixing,
                eta_x,
                self.lambda_gain(),
                p,
            );
            self.monitor = Some(mon);
        }
        self.state = next;
        Ok(())
    }

    /// Run `iterations` steps, calling `observe` at `t = 0`, every
    /// `metric_every` steps and at the final step.
    pub fn run<F>(&mut self, iterations: usize, metric_every: usize, mut observe: F) -> Result<()>
    where
        F: FnMut(&Engine<'a>) -> Result<()>,
    {
        if metric_every == 0 {
            return Err(Error::Precondition("metric cadence must be ≥ 1".into()));
        }
        observe(self)?;
        for k in 1..=iterations {
            self.step()?;
            if k % metric_every == 0 || k == iterations {
                observe(self)?;
            }
        }
        Ok(())
    }

    fn check_divergence(&self, s: &SwarmState) -> Result<()> {
        let parts: [(&'static str, &DMatrix<f64>); 7] = [
            ("X", &s.x),
            ("Y", &s.y),
            ("Λ", &s.lambda),
            ("D_x", &s.dx),
            ("D_y", &s.dy),
            ("V_x", &s.vx),
            ("V_y", &s.vy),
        ];
        for (name, mat) in parts {
            let norm = mat.norm();
            if !norm.is_finite() || norm > DIVERGENCE_NORM {
                return Err(Error::Diverged {
                    iteration: s.t,
                    quantity: name,
                    norm,
                });
            }
        }
        Ok(())
    }
}

fn stack(d: &[Grad], d1: usize, d2: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = d.len();
    let dx = DMatrix::from_fn(m, d1, |i, j| d[i].x[j]);
    let dy = DMatrix::from_fn(m, d2, |i, j| d[i].y[j]);
    (dx, dy)
}

impl Monitor {
    fn observe_start(&mut self, s: &SwarmState, lambda_gain: f64) {
        self.tracking_scale = s.vx.norm().max(s.dx.norm());
        self.lambda_floor = lambda_gain * s.y.norm();
        self.check_means(s);
    }

    fn check_means(&mut self, s: &SwarmState) {
        let r = &mut self.report;
        r.checks += 1;
        let m = s.x.nrows() as f64;
        self.tracking_scale = self.tracking_scale.max(s.vx.norm()).max(s.dx.norm());
        let gap = (column_mean(&s.vx) - column_mean(&s.dx)).norm() * m.sqrt();
        let rel = if self.tracking_scale > 0.0 {
            gap / self.tracking_scale
        } else {
            gap
        };
        r.max_tracking_rel = r.max_tracking_rel.max(rel);
        if rel > TRACKING_TOL {
            r.tracking_violations += 1;
        }
        let scale = s.lambda.norm().max(self.lambda_floor);
        let mean = column_mean(&s.lambda).norm();
        let rel = if scale > 0.0 { mean / scale } else { mean };
        r.max_lambda_mean_rel = r.max_lambda_mean_rel.max(rel);
        if rel > LAMBDA_MEAN_TOL {
            r.lambda_violations += 1;
        }
    }

    fn observe_step(
        &mut self,
        prev: &SwarmState,
        next: &SwarmState,
        w: &MixingMatrix,
        eta_x: f64,
        lambda_gain: f64,
        p: &dyn Problem,
    ) {
        self.lambda_floor = self.lambda_floor.max(lambda_gain * prev.y.norm());
        self.check_means(next);
        for i in 0..next.y.nrows() {
            if !p
                .dual_reg()
                .contains(&next.y.row(i).transpose(), FEASIBILITY_TOL)
            {
                self.report.infeasible_rows += 1;
            }
        }
        // ‖X⊥⁺‖² ≤ ρ‖X⊥‖² + η²/(1−ρ)‖V⊥‖².
        let rho = w.rho();
        let lhs = consensus_error(&next.x).norm_squared();
        let rhs = rho * consensus_error(&prev.x).norm_squared()
            + eta_x * eta_x / (1.0 - rho) * consensus_error(&prev.vx).norm_squared();
        let round = 16.0 * f64::EPSILON * (prev.x.norm() + eta_x * prev.vx.norm() + next.x.norm());
        let floor = round * round;
        let r = &mut self.report;
        if rhs + floor > 0.0 {
            r.max_consensus_ratio = r.max_consensus_ratio.max(lhs / (rhs + floor));
        }
        if lhs > rhs * (1.0 + CONSENSUS_SLACK) + floor {
            r.consensus_violations += 1;
        }
    }
}
