//! Quadratic nonconvex–strongly-concave test problem.
//!
//! `f_i(x, y) = ½xᵀA_ix + xᵀB_iy + a_iᵀx + b_iᵀy − (μ/2)‖y‖²`. The inner
//! maximization has a closed form, which makes stationarity exactly computable.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{estimate_variance, mix_seed, Components, Grad, Problem};
use crate::error::{Error, Result};
use crate::prox::{prox_eval, ProxSpec};

const VARIANCE_PROBES: usize = 1000;
const VARIANCE_DRAWS: usize = 32;

/// Coefficients of one agent's objective (or of one additive perturbation).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadAgent {
    pub a_mat: DMatrix<f64>,
    pub b_mat: DMatrix<f64>,
    pub a_vec: DVector<f64>,
    pub b_vec: DVector<f64>,
}

impl QuadAgent {
    pub fn zeros(d1: usize, d2: usize) -> Self {
        QuadAgent {
            a_mat: DMatrix::zeros(d1, d1),
            b_mat: DMatrix::zeros(d1, d2),
            a_vec: DVector::zeros(d1),
            b_vec: DVector::zeros(d2),
        }
    }

    fn grad(&self, mu: f64, x: &DVector<f64>, y: &DVector<f64>) -> Grad {
        Grad {
            x: &self.a_mat * x + &self.b_mat * y + &self.a_vec,
            y: self.b_mat.tr_mul(x) + &self.b_vec - y * mu,
        }
    }

    fn perturbed(&self, p: &QuadAgent) -> QuadAgent {
        QuadAgent {
            a_mat: &self.a_mat + &p.a_mat,
            b_mat: &self.b_mat + &p.b_mat,
            a_vec: &self.a_vec + &p.a_vec,
            b_vec: &self.b_vec + &p.b_vec,
        }
    }
}

/// Stochastic structure of the component gradients.
#[derive(Debug, Clone)]
pub enum QuadNoise {
    /// Deterministic: every sample returns the exact gradient.
    None,
    /// `n` additive coefficient perturbations per agent, averaging to zero.
    Finite(Vec<Vec<QuadAgent>>),
    /// Fresh Gaussian coefficient perturbations of the given scale per sample.
    Gaussian { scale: f64, seed: u64 },
}

/// Parameters of a random instance.
#[derive(Debug, Clone)]
pub struct QuadraticParams {
    pub agents: usize,
    pub d1: usize,
    pub d2: usize,
    pub mu: f64,
    /// Smallest eigenvalue contributed by the mean primal Hessian.
    pub curvature: f64,
    /// Approximate spectral norm of the mean coupling `B̄`.
    pub coupling: f64,
    /// Scale of the centered per-agent perturbations of `A_i`.
    pub primal_het: f64,
    /// Scale of the centered per-agent perturbations of `B_i` and `b_i`.
    pub dual_het: f64,
    /// Scale of the linear terms.
    pub linear: f64,
    /// `Some(n)` for a finite sum, `None` for streaming noise.
    pub components: Option<usize>,
    /// Scale of the component perturbations; 0 makes the problem deterministic.
    pub noise: f64,
    /// Overrides the empirical variance estimate.
    pub sigma2: Option<f64>,
    pub seed: u64,
    pub g: ProxSpec,
    pub h: ProxSpec,
}

impl Default for QuadraticParams {
    fn default() -> Self {
        QuadraticParams {
            agents: 4,
            d1: 5,
            d2: 5,
            mu: 1.0,
            curvature: 0.5,
            coupling: 0.5,
            primal_het: 0.5,
            dual_het: 0.1,
            linear: 1.0,
            components: None,
            noise: 0.0,
            sigma2: None,
            seed: 0,
            g: ProxSpec::Zero,
            h: ProxSpec::Zero,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticNcsc {
    agents: Vec<QuadAgent>,
    mu: f64,
    noise: QuadNoise,
    d1: usize,
    d2: usize,
    l: f64,
    sigma2: f64,
    g: ProxSpec,
    h: ProxSpec,
}

impl QuadraticNcsc {
    pub fn new(
        agents: Vec<QuadAgent>,
        mu: f64,
        noise: QuadNoise,
        g: ProxSpec,
        h: ProxSpec,
    ) -> Result<Self> {
        Self::build(agents, mu, noise, g, h, None, 0x5EED)
    }

    fn build(
        agents: Vec<QuadAgent>,
        mu: f64,
        noise: QuadNoise,
        g: ProxSpec,
        h: ProxSpec,
        sigma2: Option<f64>,
        variance_seed: u64,
    ) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::Precondition("at least one agent required".into()));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Precondition(format!("μ must be positive, got {mu}")));
        }
        let d1 = agents[0].a_vec.len();
        let d2 = agents[0].b_vec.len();
        if d1 == 0 || d2 == 0 {
            return Err(Error::Precondition("dimensions must be positive".into()));
        }
        for a in &agents {
            check_shapes(a, d1, d2)?;
            if (&a.a_mat - a.a_mat.transpose()).amax() > 1e-12 * a.a_mat.amax().max(1.0) {
                return Err(Error::Precondition("A_i must be symmetric".into()));
            }
        }
        match &noise {
            QuadNoise::Finite(p) => {
                if p.len() != agents.len() || p.iter().any(|c| c.is_empty()) {
                    return Err(Error::Precondition(
                        "finite noise needs a non-empty component list per agent".into(),
                    ));
                }
                for c in p.iter().flatten() {
                    check_shapes(c, d1, d2)?;
                }
            }
            QuadNoise::Gaussian { scale, .. } if !(*scale >= 0.0 && scale.is_finite()) => {
                return Err(Error::Precondition(format!(
                    "noise scale must be ≥ 0, got {scale}"
                )));
            }
            _ => {}
        }
        g.check()?;
        h.check()?;
        if let ProxSpec::Simplex { dim, .. } = h {
            if dim != d2 {
                return Err(Error::Dimension {
                    context: "dual simplex",
                    expected: d2,
                    got: dim,
                });
            }
        }
        let l = agents
            .iter()
            .map(|a| joint_hessian_norm(a, mu))
            .fold(mu, f64::max);
        let mut p = QuadraticNcsc {
            agents,
            mu,
            noise,
            d1,
            d2,
            l,
            sigma2: 0.0,
            g,
            h,
        };
        p.sigma2 = match (sigma2, &p.noise) {
            (Some(s), _) => s,
            (None, QuadNoise::None) => 0.0,
            (None, _) => estimate_variance(&p, VARIANCE_PROBES, VARIANCE_DRAWS, variance_seed),
        };
        Ok(p)
    }

    /// Random heterogeneous instance whose averaged primal function is convex
    /// while individual `A_i` are indefinite.
    pub fn random(params: &QuadraticParams) -> Result<Self> {
        let QuadraticParams {
            agents: m,
            d1,
            d2,
            mu,
            ..
        } = *params;
        if m == 0 || d1 == 0 || d2 == 0 {
            return Err(Error::Precondition(
                "agents and dimensions must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mat_scale = 1.0 / ((d1 as f64).sqrt() + (d2 as f64).sqrt());
        let b_bar = gaussian(&mut rng, d1, d2) * (params.coupling * mat_scale);
        let a_bar = DMatrix::identity(d1, d1) * params.curvature
            - (&b_bar * b_bar.transpose()) * (0.5 / mu);
        let b_vec_bar = gaussian_vec(&mut rng, d2) * (params.linear / (d2 as f64).sqrt());

        let sym_scale = params.primal_het / (2.0 * (d1 as f64).sqrt());
        let e: Vec<DMatrix<f64>> = (0..m)
            .map(|_| symmetric_gaussian(&mut rng, d1) * sym_scale)
            .collect();
        let f: Vec<DMatrix<f64>> = (0..m)
            .map(|_| gaussian(&mut rng, d1, d2) * (params.dual_het * mat_scale))
            .collect();
        let c: Vec<DVector<f64>> = (0..m)
            .map(|_| gaussian_vec(&mut rng, d2) * (params.dual_het / (d2 as f64).sqrt()))
            .collect();
        let e = centered(e);
        let f = centered(f);
        let c = centered_vec(c);
        let agents: Vec<QuadAgent> = (0..m)
            .map(|i| QuadAgent {
                a_mat: &a_bar + &e[i],
                b_mat: &b_bar + &f[i],
                a_vec: gaussian_vec(&mut rng, d1) * (params.linear / (d1 as f64).sqrt()),
                b_vec: &b_vec_bar + &c[i],
            })
            .collect();

        let deterministic = params.noise == 0.0;
        let noise = match params.components {
            Some(0) => {
                return Err(Error::Precondition(
                    "component count must be positive".into(),
                ))
            }
            // A deterministic finite sum still advertises its component count.
            Some(n) if deterministic => {
                QuadNoise::Finite(vec![vec![QuadAgent::zeros(d1, d2); n]; m])
            }
            Some(n) => QuadNoise::Finite(
                (0..m)
                    .map(|_| centered_perturbations(&mut rng, n, d1, d2, params.noise))
                    .collect(),
            ),
            None if deterministic => QuadNoise::None,
            None => QuadNoise::Gaussian {
                scale: params.noise,
                seed: mix_seed(&[params.seed, 0x0153]),
            },
        };
        let sigma2 = if deterministic {
            Some(params.sigma2.unwrap_or(0.0))
        } else {
            params.sigma2
        };
        Self::build(
            agents,
            mu,
            noise,
            params.g.clone(),
            params.h.clone(),
            sigma2,
            params.seed ^ 0x5EED,
        )
    }

    pub fn with_variance_bound(mut self, sigma2: f64) -> Self {
        self.sigma2 = sigma2;
        self
    }

    pub fn agent(&self, i: usize) -> &QuadAgent {
        &self.agents[i]
    }

    pub fn noise(&self) -> &QuadNoise {
        &self.noise
    }

    fn gaussian_perturbation(&self, scale: f64, seed: u64, agent: usize, sample: u64) -> QuadAgent {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, agent as u64, sample]));
        let (d1, d2) = (self.d1, self.d2);
        let mat_scale = scale / ((d1 as f64).sqrt() + (d2 as f64).sqrt());
        QuadAgent {
            a_mat: symmetric_gaussian(&mut rng, d1) * (scale / (2.0 * (d1 as f64).sqrt())),
            b_mat: gaussian(&mut rng, d1, d2) * mat_scale,
            a_vec: gaussian_vec(&mut rng, d1) * (scale / (d1 as f64).sqrt()),
            b_vec: gaussian_vec(&mut rng, d2) * (scale / (d2 as f64).sqrt()),
        }
    }
}

impl Problem for QuadraticNcsc {
    fn agents(&self) -> usize {
        self.agents.len()
    }
    fn primal_dim(&self) -> usize {
        self.d1
    }
    fn dual_dim(&self) -> usize {
        self.d2
    }
    fn components(&self) -> Components {
        match &self.noise {
            QuadNoise::Finite(p) => Components::Finite(p[0].len()),
            QuadNoise::None => Components::Finite(1),
            QuadNoise::Gaussian { .. } => Components::Streaming,
        }
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
        let a = &self.agents[agent];
        0.5 * x.dot(&(&a.a_mat * x)) + x.dot(&(&a.b_mat * y)) + a.a_vec.dot(x) + a.b_vec.dot(y)
            - 0.5 * self.mu * y.norm_squared()
    }

    fn exact_grad(&self, agent: usize, x: &DVector<f64>, y: &DVector<f64>) -> Grad {
        self.agents[agent].grad(self.mu, x, y)
    }

    fn sample_grad(&self, agent: usize, sample: u64, x: &DVector<f64>, y: &DVector<f64>) -> Grad {
        match &self.noise {
            QuadNoise::None => self.exact_grad(agent, x, y),
            QuadNoise::Finite(p) => {
                let pert = &p[agent][sample as usize];
                self.agents[agent].perturbed(pert).grad(self.mu, x, y)
            }
            QuadNoise::Gaussian { scale, seed } => {
                let pert = self.gaussian_perturbation(*scale, *seed, agent, sample);
                self.agents[agent].perturbed(&pert).grad(self.mu, x, y)
            }
        }
    }

    fn dual_maximizer(
        &self,
        agent: usize,
        x: &DVector<f64>,
        shift: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        // Stationarity of ⟨B_iᵀx + b_i − shift, y⟩ − (μ/2)‖y‖² − h(y).
        let a = &self.agents[agent];
        let c = (a.b_mat.tr_mul(x) + &a.b_vec - shift) / self.mu;
        prox_eval(&self.h, 1.0 / self.mu, &c).ok()
    }
}

fn check_shapes(a: &QuadAgent, d1: usize, d2: usize) -> Result<()> {
    let ok = a.a_mat.shape() == (d1, d1)
        && a.b_mat.shape() == (d1, d2)
        && a.a_vec.len() == d1
        && a.b_vec.len() == d2;
    if ok {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "agent coefficients do not match dimensions ({d1}, {d2})"
        )))
    }
}

/// Spectral norm of `[[A, B], [Bᵀ, −μI]]`.
fn joint_hessian_norm(a: &QuadAgent, mu: f64) -> f64 {
    let (d1, d2) = (a.a_vec.len(), a.b_vec.len());
    let mut h = DMatrix::zeros(d1 + d2, d1 + d2);
    h.view_mut((0, 0), (d1, d1)).copy_from(&a.a_mat);
    h.view_mut((0, d1), (d1, d2)).copy_from(&a.b_mat);
    h.view_mut((d1, 0), (d2, d1))
        .copy_from(&a.b_mat.transpose());
    for k in 0..d2 {
        h[(d1 + k, d1 + k)] = -mu;
    }
    SymmetricEigen::new(h).eigenvalues.amax()
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

fn symmetric_gaussian(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let g = gaussian(rng, d, d);
    (&g + g.transpose()) * std::f64::consts::FRAC_1_SQRT_2
}

fn centered(mut v: Vec<DMatrix<f64>>) -> Vec<DMatrix<f64>> {
    if v.len() < 2 {
        return v.into_iter().map(|m| m * 0.0).collect();
    }
    let mean = v
        .iter()
        .fold(DMatrix::zeros(v[0].nrows(), v[0].ncols()), |acc, m| acc + m)
        / v.len() as f64;
    for m in v.iter_mut() {
        *m -= &mean;
    }
    v
}

fn centered_vec(mut v: Vec<DVector<f64>>) -> Vec<DVector<f64>> {
    if v.len() < 2 {
        return v.into_iter().map(|m| m * 0.0).collect();
    }
    let mean = v.iter().fold(DVector::zeros(v[0].len()), |acc, m| acc + m) / v.len() as f64;
    for m in v.iter_mut() {
        *m -= &mean;
    }
    v
}

fn centered_perturbations(
    rng: &mut ChaCha8Rng,
    n: usize,
    d1: usize,
    d2: usize,
    scale: f64,
) -> Vec<QuadAgent> {
    let mat_scale = scale / ((d1 as f64).sqrt() + (d2 as f64).sqrt());
    let a = centered(
        (0..n)
            .map(|_| symmetric_gaussian(rng, d1) * (scale / (2.0 * (d1 as f64).sqrt())))
            .collect(),
    );
    let b = centered((0..n).map(|_| gaussian(rng, d1, d2) * mat_scale).collect());
    let av = centered_vec(
        (0..n)
            .map(|_| gaussian_vec(rng, d1) * (scale / (d1 as f64).sqrt()))
            .collect(),
    );
    let bv = centered_vec(
        (0..n)
            .map(|_| gaussian_vec(rng, d2) * (scale / (d2 as f64).sqrt()))
            .collect(),
    );
    (0..n)
        .map(|j| QuadAgent {
            a_mat: a[j].clone(),
            b_mat: b[j].clone(),
            a_vec: av[j].clone(),
            b_vec: bv[j].clone(),
        })
        .collect()
}
