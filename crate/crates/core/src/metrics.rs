//! Stationarity measures and diagnostics of a swarm state.
//!
//! With `Φ(X, Λ, Y) = (1/m) Σ_i [f_i(x_i, y_i) − h(y_i)] − (L/2√m)⟨Λ, (W−I)Y⟩`
//! and `P(x, Λ) = max_Y Φ(𝟙xᵀ, Λ, Y)`, a state is stationary when both
//!
//! * `‖(x̄ − prox_{η g}(x̄ − η ∇_x P))/η‖² + (L²/m)‖X⊥‖²` and
//! * `‖∇_Λ P(x̄, Λ)‖²`
//!
//! are small.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::engine::{Engine, SwarmState};
use crate::error::Result;
use crate::problems::{
    inner_argmax, maximize_dual, projected_ascent, Problem, INNER_MAX_ITER, INNER_TOL,
};
use crate::prox::{prox_eval, prox_rows};
use crate::topology::{column_mean, consensus_error, MixingMatrix};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarityReport {
    pub t: usize,
    pub samples: u64,
    pub comms: u64,
    /// Squared proximal gradient mapping of `P` at `(x̄, Λ)`.
    pub prox_grad_norm2: f64,
    /// `(L²/m)‖X⊥‖²`.
    pub consensus_term: f64,
    /// `‖∇_Λ P(x̄, Λ)‖²`.
    pub lambda_grad_norm2: f64,
    /// `‖S_Φ(X, Λ) − Y‖²`.
    pub y_gap: f64,
    /// `‖D − ∇F(X, Y)‖²`.
    pub tracking_residual: f64,
    /// `‖V_x⊥‖²`.
    pub v_consensus: f64,
    /// `Φ(X, Λ, Y) + (1/m) Σ g(x_i)`.
    pub objective_estimate: f64,
    /// Unit-step prox residual at the averaged-problem maximizer plus consensus errors.
    pub unit_prox_metric: f64,
    /// Averaged gradient at per-agent maximizers plus consensus errors.
    pub per_agent_metric: f64,
}

impl StationarityReport {
    /// First stationarity quantity: prox-gradient plus scaled consensus.
    pub fn primal_measure(&self) -> f64 {
        self.prox_grad_norm2 + self.consensus_term
    }

    /// Second stationarity quantity.
    pub fn dual_measure(&self) -> f64 {
        self.lambda_grad_norm2
    }

    pub fn is_finite(&self) -> bool {
        [
            self.prox_grad_norm2,
            self.consensus_term,
            self.lambda_grad_norm2,
            self.y_gap,
            self.tracking_residual,
            self.v_consensus,
            self.unit_prox_metric,
            self.per_agent_metric,
        ]
        .iter()
        .all(|v| v.is_finite())
            && !self.objective_estimate.is_nan()
    }
}

fn broadcast(row: &DVector<f64>, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, row.len(), |_, j| row[j])
}

/// `(∇_x P(x̄, Λ), ∇_Λ P(x̄, Λ), Ŷ)` with `Ŷ = S_Φ(𝟙x̄ᵀ, Λ)`.
pub fn grad_p(
    p: &dyn Problem,
    w: &MixingMatrix,
    coupling_l: f64,
    xbar: &DVector<f64>,
    lambda: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let m = p.agents();
    let y_hat = inner_argmax(p, w, coupling_l, &broadcast(xbar, m), lambda)?;
    let mut gx = DVector::zeros(p.primal_dim());
    for i in 0..m {
        gx += p.exact_grad(i, xbar, &y_hat.row(i).transpose()).x;
    }
    gx /= m as f64;
    let g_lambda = w.laplacian_apply(&y_hat) * (-coupling_l / (2.0 * (m as f64).sqrt()));
    Ok((gx, g_lambda, y_hat))
}

/// `Φ(X, Λ, Y) + (1/m) Σ g(x_i)`.
pub fn objective(p: &dyn Problem, w: &MixingMatrix, coupling_l: f64, s: &SwarmState) -> f64 {
    let m = p.agents();
    let mut total = 0.0;
    for i in 0..m {
        let x = s.x.row(i).transpose();
        let y = s.y.row(i).transpose();
        total += p.value(i, &x, &y) - p.dual_reg().value(&y) + p.primal_reg().value(&x);
    }
    total / m as f64
        - coupling_l / (2.0 * (m as f64).sqrt()) * s.lambda.dot(&w.laplacian_apply(&s.y))
}

/// `argmax_y (1/m) Σ_i f_i(x, y) − h(y)`.
pub fn averaged_dual_maximizer(p: &dyn Problem, x: &DVector<f64>) -> Result<DVector<f64>> {
    let m = p.agents();
    let h = p.dual_reg();
    let start = prox_eval(h, 1.0, &DVector::zeros(p.dual_dim()))?;
    projected_ascent(
        |y| {
            let mut g = DVector::zeros(y.len());
            for i in 0..m {
                g += p.exact_grad(i, x, y).y;
            }
            g / m as f64
        },
        h,
        1.0 / p.smoothness(),
        start,
        INNER_TOL,
        INNER_MAX_ITER,
    )
}

fn consensus_terms(s: &SwarmState) -> f64 {
    consensus_error(&s.x).norm_squared() + consensus_error(&s.y).norm_squared()
}

/// `‖x̄ − prox_g(x̄ − (1/m)Σ∇_x f_i(x̄, y*))‖² + ‖X⊥‖² + ‖Y⊥‖²` where `y*`
/// maximizes the averaged objective at `x̄`. The prox step is one.
pub fn experiment_metric_dro(p: &dyn Problem, s: &SwarmState) -> Result<f64> {
    let xbar = column_mean(&s.x);
    let y_star = averaged_dual_maximizer(p, &xbar)?;
    let mut gx = DVector::zeros(p.primal_dim());
    for i in 0..p.agents() {
        gx += p.exact_grad(i, &xbar, &y_star).x;
    }
    gx /= p.agents() as f64;
    let moved = prox_eval(p.primal_reg(), 1.0, &(&xbar - gx))?;
    Ok((xbar - moved).norm_squared() + consensus_terms(s))
}

/// `‖(1/m) Σ ∇_x f_i(x̄, y_i*)‖² + ‖X⊥‖² + ‖Y⊥‖²` with `y_i*` maximizing
/// `f_i(x̄, ·) − h`.
pub fn per_agent_metric_fair(p: &dyn Problem, s: &SwarmState) -> Result<f64> {
    let xbar = column_mean(&s.x);
    let zero = DVector::zeros(p.dual_dim());
    let mut gx = DVector::zeros(p.primal_dim());
    for i in 0..p.agents() {
        let y = maximize_dual(p, i, &xbar, &zero)?;
        gx += p.exact_grad(i, &xbar, &y).x;
    }
    gx /= p.agents() as f64;
    Ok(gx.norm_squared() + consensus_terms(s))
}

/// All stationarity terms and diagnostics of `s`.
pub fn stationarity(
    p: &dyn Problem,
    w: &MixingMatrix,
    coupling_l: f64,
    s: &SwarmState,
    eta_x: f64,
) -> Result<StationarityReport> {
    let m = p.agents();
    let xbar = column_mean(&s.x);
    let (gx, g_lambda, _) = grad_p(p, w, coupling_l, &xbar, &s.lambda)?;
    let moved = prox_eval(p.primal_reg(), eta_x, &(&xbar - &gx * eta_x))?;
    let prox_grad_norm2 = ((&xbar - moved) / eta_x).norm_squared();
    let consensus_term = coupling_l * coupling_l / m as f64 * consensus_error(&s.x).norm_squared();

    let y_tilde = inner_argmax(p, w, coupling_l, &s.x, &s.lambda)?;
    let mut residual = 0.0;
    for i in 0..m {
        let g = p.exact_grad(i, &s.x.row(i).transpose(), &s.y.row(i).transpose());
        residual += (s.dx.row(i).transpose() - g.x).norm_squared()
            + (s.dy.row(i).transpose() - g.y).norm_squared();
    }

    Ok(StationarityReport {
        t: s.t,
        samples: s.samples,
        comms: s.comms,
        prox_grad_norm2,
        consensus_term,
        lambda_grad_norm2: g_lambda.norm_squared(),
        y_gap: (y_tilde - &s.y).norm_squared(),
        tracking_residual: residual,
        v_consensus: consensus_error(&s.vx).norm_squared(),
        objective_estimate: objective(p, w, coupling_l, s),
        unit_prox_metric: experiment_metric_dro(p, s)?,
        per_agent_metric: per_agent_metric_fair(p, s)?,
    })
}

/// [`stationarity`] with the engine's own constants.
pub fn report(engine: &Engine<'_>) -> Result<StationarityReport> {
    stationarity(
        engine.problem(),
        engine.mixing(),
        engine.coupling_l(),
        engine.state(),
        engine.config().steps.eta_x,
    )
}

/// Rows of `Y` projected onto `dom h`; used to build feasible test states.
pub fn project_dual_rows(p: &dyn Problem, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    prox_rows(p.dual_reg(), 1.0, y)
}
