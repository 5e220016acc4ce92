//! Distributionally robust logistic regression.
//!
//! Agent `i` holds `n` samples and a weight vector `y_i` over them:
//! `f_i(x, y) = m Σ_j y_j ℓ(x; a_ij, b_ij) − (μ/2)‖y − 𝟙/N‖²` with `N = mn`,
//! `ℓ` the logistic loss of a linear classifier, `g = λ‖·‖₁` and `h` the
//! indicator of `{y ≥ 0, Σy = 1/m}`.

use nalgebra::{DMatrix, DVector};

use super::data::Dataset;
use super::{estimate_variance, Components, Grad, Problem};
use crate::error::{Error, Result};
use crate::prox::ProxSpec;

const VARIANCE_PROBES: usize = 1000;

#[derive(Debug, Clone)]
struct Shard {
    features: DMatrix<f64>,
    /// Labels mapped to `±1`.
    signs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DroLogistic {
    shards: Vec<Shard>,
    mu: f64,
    d1: usize,
    n: usize,
    center: f64,
    l: f64,
    sigma2: f64,
    g: ProxSpec,
    h: ProxSpec,
}

/// `log(1 + e^{−z})` without overflow.
pub fn logistic_loss(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// `d/dz log(1 + e^{−z}) = −1/(1 + e^{z})`.
pub fn logistic_slope(z: f64) -> f64 {
    if z > 0.0 {
        let e = (-z).exp();
        -e / (1.0 + e)
    } else {
        -1.0 / (1.0 + z.exp())
    }
}

impl DroLogistic {
    /// Build from equally sized agent shards.
    pub fn new(shards: &[Dataset], mu: f64, lambda_reg: f64) -> Result<Self> {
        Self::with_variance(shards, mu, lambda_reg, None)
    }

    pub fn with_variance(
        shards: &[Dataset],
        mu: f64,
        lambda_reg: f64,
        sigma2: Option<f64>,
    ) -> Result<Self> {
        if shards.is_empty() {
            return Err(Error::Precondition("at least one shard required".into()));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Precondition(format!("μ must be positive, got {mu}")));
        }
        let n = shards[0].rows();
        let d1 = shards[0].dim();
        if n == 0 || d1 == 0 {
            return Err(Error::Precondition("shards must be non-empty".into()));
        }
        if shards.iter().any(|s| s.rows() != n || s.dim() != d1) {
            return Err(Error::Precondition("shards must have equal shapes".into()));
        }
        let m = shards.len();
        let g = ProxSpec::L1 { weight: lambda_reg };
        g.check()?;
        let h = ProxSpec::Simplex {
            dim: n,
            total: 1.0 / m as f64,
        };
        let shards: Vec<Shard> = shards
            .iter()
            .map(|s| Shard {
                features: s.features.clone(),
                signs: s.labels.iter().map(|b| 2.0 * b - 1.0).collect(),
            })
            .collect();
        // Hessian blocks on dom(h): xx ≤ max‖a‖²/4, xy ≤ m‖A_i‖_F, yy = μ.
        let l = shards
            .iter()
            .map(|s| {
                let max_sq = s
                    .features
                    .row_iter()
                    .map(|r| r.norm_squared())
                    .fold(0.0, f64::max);
                (max_sq / 4.0).max(mu) + m as f64 * s.features.norm()
            })
            .fold(0.0, f64::max);
        let mut p = DroLogistic {
            shards,
            mu,
            d1,
            n,
            center: 1.0 / (m * n) as f64,
            l,
            sigma2: 0.0,
            g,
            h,
        };
        p.sigma2 = match sigma2 {
            Some(s) => s,
            None => estimate_variance(&p, VARIANCE_PROBES, 1, 0xD50),
        };
        Ok(p)
    }

    fn margin(&self, agent: usize, j: usize, x: &DVector<f64>) -> f64 {
        let s = &self.shards[agent];
        s.signs[j] * s.features.row(j).transpose().dot(x)
    }

    /// Per-sample logistic losses of agent `i` at `x`.
    pub fn losses(&self, agent: usize, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n, |j, _| logistic_loss(self.margin(agent, j, x)))
    }

    pub fn lambda_reg(&self) -> f64 {
        match self.g {
            ProxSpec::L1 { weight } => weight,
            _ => unreachable!(),
        }
    }
}

impl Problem for DroLogistic {
    fn agents(&self) -> usize {
        self.shards.len()
    }
    fn primal_dim(&self) -> usize {
        self.d1
    }
    fn dual_dim(&self) -> usize {
        self.n
    }
    fn components(&self) -> Components {
        Components::Finite(self.n)
    }
    fn smoothness(&self) -> f64 {
        self.l
    }
    fn strong_concavity(&self) -> f64 {
        self.mu
    }
    fn variance_bound(&self) -> f64 {
        self.sigma2
    }
    fn primal_reg(&self) -> &ProxSpec {
        &self.g
    }
    fn dual_reg(&self) -> &ProxSpec {
        &self.h
    }

    fn value(&self, agent: usize, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let m = self.agents() as f64;
        let weighted = self.losses(agent, x).dot(y);
        let dev: f64 = y.iter().map(|v| (v - self.center).powi(2)).sum();
        m * weighted - 0.5 * self.mu * dev
    }

    fn exact_grad(&self, agent: usize, x: &DVector<f64>, y: &DVector<f64>) -> Grad {
        let m = self.agents() as f64;
        let s = &self.shards[agent];
        let mut gx = DVector::zeros(self.d1);
        let mut gy = DVector::zeros(self.n);
        for j in 0..self.n {
            let z = self.margin(agent, j, x);
            gx.axpy(
                m * y[j] * s.signs[j] * logistic_slope(z),
                &s.features.row(j).transpose(),
                1.0,
            );
            gy[j] = m * logistic_loss(z) - self.mu * (y[j] - self.center);
        }
        Grad { x: gx, y: gy }
    }

    fn sample_grad(&self, agent: usize, sample: u64, x: &DVector<f64>, y: &DVector<f64>) -> Grad {
        // Component j carries n times its share so the components average to f_i.
        let m = self.agents() as f64;
        let nf = self.n as f64;
        let j = sample as usize;
        let s = &self.shards[agent];
        let z = self.margin(agent, j, x);
        let gx = s.features.row(j).transpose() * (nf * m * y[j] * s.signs[j] * logistic_slope(z));
        let mut gy = y.map(|v| -self.mu * (v - self.center));
        gy[j] += nf * m * logistic_loss(z);
        Grad { x: gx, y: gy }
    }
}
