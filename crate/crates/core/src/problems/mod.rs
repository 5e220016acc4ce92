//! Local objectives `f_i(x, y)` and their gradient oracles.

pub mod data;
pub mod dro;
pub mod quadratic;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::prox::{prox_eval, ProxSpec};
use crate::topology::MixingMatrix;

pub use dro::DroLogistic;
pub use quadratic::{QuadAgent, QuadNoise, QuadraticNcsc, QuadraticParams};

/// Tolerance on the update norm of the iterative inner solver, relative to
/// `max(1, ‖y‖)` so that it stays attainable for large iterates.
pub const INNER_TOL: f64 = 1e-10;
/// Iteration cap of the iterative inner solver.
pub const INNER_MAX_ITER: usize = 100_000;

/// Number of local components an agent owns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Components {
    /// `f_i = (1/n) Σ_j f_ij`; sample ids are component indices.
    Finite(usize),
    /// Expectation over an unbounded sample space; sample ids are seeds.
    Streaming,
}

/// Joint gradient `(∇_x f, ∇_y f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grad {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

impl Grad {
    pub fn zeros(d1: usize, d2: usize) -> Self {
        Grad {
            x: DVector::zeros(d1),
            y: DVector::zeros(d2),
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Grad) {
        self.x.axpy(alpha, &other.x, 1.0);
        self.y.axpy(alpha, &other.y, 1.0);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.x *= alpha;
        self.y *= alpha;
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.y.iter()).all(|v| v.is_finite())
    }
}

/// A family of local objectives `f_1, …, f_m` with regularizers `g` and `h`.
///
/// `f_i(x, ·)` must be `μ`-strongly concave and `∇f_i` `L`-Lipschitz. Oracles are
/// read-only and may be queried from several agents at once.
pub trait Problem: Send + Sync {
    fn agents(&self) -> usize;
    fn primal_dim(&self) -> usize;
    fn dual_dim(&self) -> usize;
    fn components(&self) -> Components;
    fn smoothness(&self) -> f64;
    fn strong_concavity(&self) -> f64;
    /// Bound on `E‖∇f_i(z; ξ) − ∇f_i(z)‖²`.
    fn variance_bound(&self) -> f64;
    fn primal_reg(&self) -> &ProxSpec;
    fn dual_reg(&self) -> &ProxSpec;

    fn value(&self, agent: usize, x: &DVector<f64>, y: &DVector<f64>) -> f64;
    fn exact_grad(&self, agent: usize, x: &DVector<f64>, y: &DVector<f64>) -> Grad;
    /// Gradient of a single component (finite) or realization (streaming).
    fn sample_grad(&self, agent: usize, sample: u64, x: &DVector<f64>, y: &DVector<f64>) -> Grad;

    /// Closed-form `argmax_y f_i(x, y) − h(y) − ⟨shift, y⟩`, if available.
    fn dual_maximizer(
        &self,
        _agent: usize,
        _x: &DVector<f64>,
        _shift: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        None
    }

    fn condition_number(&self) -> f64 {
        self.smoothness() / self.strong_concavity()
    }

    /// Minibatch average `(1/|B|) Σ_{ξ∈B} ∇f_i(x, y; ξ)`, summed in batch order.
    fn batch_grad(
        &self,
        agent: usize,
        batch: &[u64],
        x: &DVector<f64>,
        y: &DVector<f64>,
    ) -> Result<Grad> {
        if batch.is_empty() {
            return Err(Error::Precondition("empty sample batch".into()));
        }
        let mut acc = Grad::zeros(self.primal_dim(), self.dual_dim());
        for &s in batch {
            acc.axpy(1.0, &self.sample_grad(agent, s, x, y));
        }
        acc.scale(1.0 / batch.len() as f64);
        Ok(acc)
    }
}

pub(crate) fn check_point(p: &dyn Problem, x: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
    if x.len() != p.primal_dim() {
        return Err(Error::Dimension {
            context: "primal point",
            expected: p.primal_dim(),
            got: x.len(),
        });
    }
    if y.len() != p.dual_dim() {
        return Err(Error::Dimension {
            context: "dual point",
            expected: p.dual_dim(),
            got: y.len(),
        });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("oracle input"));
    }
    Ok(())
}

/// Exact gradient with input validation.
pub fn checked_grad(
    p: &dyn Problem,
    agent: usize,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<Grad> {
    check_point(p, x, y)?;
    Ok(p.exact_grad(agent, x, y))
}

/// Projected gradient ascent `y ← prox_{step·h}(y + step·grad(y))` until the
/// update norm drops below `tol · max(1, ‖y‖)`.
pub fn projected_ascent<F>(
    grad: F,
    h: &ProxSpec,
    step: f64,
    start: DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut y = start;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let g = grad(&y);
        let next = prox_eval(h, step, &(&y + step * g))?;
        residual = (&next - &y).norm();
        y = next;
        if residual < tol * y.norm().max(1.0) {
            return Ok(y);
        }
    }
    Err(Error::OracleFailure {
        iterations: max_iter,
        residual,
    })
}

/// `argmax_y f_i(x, y) − h(y) − ⟨shift, y⟩`: closed form when the problem
/// provides one, otherwise projected ascent with step `1/L`.
pub fn maximize_dual(
    p: &dyn Problem,
    agent: usize,
    x: &DVector<f64>,
    shift: &DVector<f64>,
) -> Result<DVector<f64>> {
    if let Some(y) = p.dual_maximizer(agent, x, shift) {
        return Ok(y);
    }
    iterative_dual(p, agent, x, shift, INNER_TOL, INNER_MAX_ITER)
}

/// The iterative branch of [`maximize_dual`], exposed for cross-checks.
pub fn iterative_dual(
    p: &dyn Problem,
    agent: usize,
    x: &DVector<f64>,
    shift: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    let h = p.dual_reg();
    let start = prox_eval(h, 1.0, &DVector::zeros(p.dual_dim()))?;
    projected_ascent(
        |y| p.exact_grad(agent, x, y).y - shift,
        h,
        1.0 / p.smoothness(),
        start,
        tol,
        max_iter,
    )
}

/// Dual shift `(L√m/2)(W−I)ᵀΛ` felt by each agent.
pub fn dual_shift(mixing: &MixingMatrix, coupling_l: f64, lambda: &DMatrix<f64>) -> DMatrix<f64> {
    let m = mixing.agents() as f64;
    mixing.laplacian_t_apply(lambda) * (coupling_l * m.sqrt() / 2.0)
}

/// `S_Φ(X, Λ)`: row `i` maximizes `f_i(x_i, ·) − h − ⟨shift_i, ·⟩`.
pub fn inner_argmax(
    p: &dyn Problem,
    mixing: &MixingMatrix,
    coupling_l: f64,
    x: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let m = p.agents();
    if x.nrows() != m || lambda.nrows() != m {
        return Err(Error::Dimension {
            context: "inner_argmax rows",
            expected: m,
            got: x.nrows(),
        });
    }
    if x.ncols() != p.primal_dim() {
        return Err(Error::Dimension {
            context: "inner_argmax X",
            expected: p.primal_dim(),
            got: x.ncols(),
        });
    }
    if lambda.ncols() != p.dual_dim() {
        return Err(Error::Dimension {
            context: "inner_argmax Λ",
            expected: p.dual_dim(),
            got: lambda.ncols(),
        });
    }
    let shift = dual_shift(mixing, coupling_l, lambda);
    let mut out = DMatrix::zeros(m, p.dual_dim());
    for i in 0..m {
        let y = maximize_dual(p, i, &x.row(i).transpose(), &shift.row(i).transpose())?;
        out.set_row(i, &y.transpose());
    }
    Ok(out)
}

/// Draw a point from the domain of `h` for probing.
pub(crate) fn random_dual_point(h: &ProxSpec, dim: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    match *h {
        ProxSpec::Simplex { total, .. } => {
            let e: Vec<f64> = (0..dim).map(|_| Exp1.sample(rng)).collect();
            let s: f64 = e.iter().sum();
            DVector::from_iterator(dim, e.into_iter().map(|v| total * v / s))
        }
        ProxSpec::Nonneg => DVector::from_fn(dim, |_, _| rng.random::<f64>()),
        _ => DVector::from_fn(dim, |_, _| StandardNormal.sample(rng)),
    }
}

/// Largest component variance `E‖∇f_i(z; ξ) − ∇f_i(z)‖²` over random probe
/// points. Finite sums are averaged over all components; streaming problems
/// over `draws` realizations.
pub fn estimate_variance(p: &dyn Problem, probes: usize, draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let x = DVector::from_fn(p.primal_dim(), |_, _| StandardNormal.sample(&mut rng));
        let y = random_dual_point(p.dual_reg(), p.dual_dim(), &mut rng);
        for i in 0..p.agents() {
            let exact = p.exact_grad(i, &x, &y);
            let samples: Vec<u64> = match p.components() {
                Components::Finite(n) => (0..n as u64).collect(),
                Components::Streaming => (0..draws).map(|_| rng.random()).collect(),
            };
            let mut acc = 0.0;
            for &s in &samples {
                let g = p.sample_grad(i, s, &x, &y);
                acc += (g.x - &exact.x).norm_squared() + (g.y - &exact.y).norm_squared();
            }
            worst = worst.max(acc / samples.len() as f64);
        }
    }
    worst
}

/// Deterministic 64-bit mixing of several words into one seed.
pub fn mix_seed(words: &[u64]) -> u64 {
    let mut h: u64 = 0x243F_6A88_85A3_08D3;
    for &w in words {
        h ^= w;
        h = splitmix(h);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
