//! Independent reference implementations shared by the core integration tests
//! and the harness acceptance suite. Checks return a short summary on success
//! and a description of the first mismatch on failure.
#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use vrlm_core::metrics::{project_dual_rows, stationarity};
use vrlm_core::problems::{
    inner_argmax, iterative_dual, QuadAgent, QuadraticNcsc, QuadraticParams,
};
use vrlm_core::prox::prox_eval;
use vrlm_core::vr::{agent_rng, draw_batch};
use vrlm_core::{
    Engine, EngineConfig, EstimatorKind, MixingMatrix, Problem, ProxSpec, StepSizes, SwarmState,
};

pub type Check = Result<String, String>;

pub fn normal(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// Prox of `step · r` written from scratch; the simplex uses bisection on the
/// threshold rather than sorting.
pub fn prox_ref(spec: &ProxSpec, step: f64, v: &[f64]) -> Vec<f64> {
    match *spec {
        ProxSpec::Zero => v.to_vec(),
        ProxSpec::Nonneg => v.iter().map(|x| x.max(0.0)).collect(),
        ProxSpec::L1 { weight } => {
            let t = weight * step;
            v.iter()
                .map(|x| x.signum() * (x.abs() - t).max(0.0))
                .collect()
        }
        ProxSpec::Simplex { total, .. } => {
            let mass = |tau: f64| v.iter().map(|x| (x - tau).max(0.0)).sum::<f64>();
            let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - total;
            let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mass(mid) > total {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            v.iter().map(|x| (x - 0.5 * (lo + hi)).max(0.0)).collect()
        }
    }
}

pub fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// `argmax_y ⟨B_iᵀx + b_i − s, y⟩ − (μ/2)‖y‖² − h(y)` by projected ascent with
/// step `1/(2μ)`, stopping early once the iterate stalls at rounding level.
pub fn quad_dual_ref(
    a: &QuadAgent,
    mu: f64,
    h: &ProxSpec,
    x: &DVector<f64>,
    shift: &[f64],
    steps: usize,
) -> Vec<f64> {
    let lin: Vec<f64> = (a.b_mat.tr_mul(x) + &a.b_vec)
        .iter()
        .zip(shift)
        .map(|(u, s)| u - s)
        .collect();
    let tau = 0.5 / mu;
    let mut y = prox_ref(h, 1.0, &vec![0.0; lin.len()]);
    for _ in 0..steps {
        let moved: Vec<f64> = y
            .iter()
            .zip(&lin)
            .map(|(yj, lj)| yj + tau * (lj - mu * yj))
            .collect();
        let next = prox_ref(h, tau, &moved);
        let stalled = next
            .iter()
            .zip(&y)
            .all(|(a, b)| (a - b).abs() <= 1e-16 * (1.0 + b.abs()));
        y = next;
        if stalled {
            break;
        }
    }
    y
}

pub struct Case {
    pub p: QuadraticNcsc,
    pub w: MixingMatrix,
    pub x: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
}

pub fn random_case(k: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + k);
    let m = 1 + (k as usize * 3) % 8;
    let d1 = 1 + (k as usize) % 5;
    let d2 = 1 + (k as usize * 7) % 5;
    let g = if k.is_multiple_of(2) {
        ProxSpec::Zero
    } else {
        ProxSpec::L1 { weight: 0.1 }
    };
    let h = match k % 4 {
        0 => ProxSpec::Zero,
        1 => ProxSpec::simplex(d2),
        2 => ProxSpec::L1 { weight: 0.2 },
        _ => ProxSpec::Nonneg,
    };
    let p = QuadraticNcsc::random(&QuadraticParams {
        agents: m,
        d1,
        d2,
        seed: k,
        g,
        h,
        ..Default::default()
    })
    .unwrap();
    let w = if m >= 3 {
        MixingMatrix::ring(m).unwrap()
    } else {
        MixingMatrix::complete(m).unwrap()
    };
    let x = normal(&mut rng, m, d1);
    let lambda = normal(&mut rng, m, d2) * 0.3;
    Case { p, w, x, lambda }
}

pub fn shift_ref(w: &MixingMatrix, l: f64, lambda: &DMatrix<f64>) -> DMatrix<f64> {
    let m = w.agents();
    let wm = w.weights();
    let c = l * (m as f64).sqrt() / 2.0;
    DMatrix::from_fn(m, lambda.ncols(), |i, j| {
        // [(W − I)ᵀΛ]_{ij} = Σ_k (W_{ki} − δ_{ki}) Λ_{kj}
        c * (0..m)
            .map(|k| (wm[(k, i)] - if k == i { 1.0 } else { 0.0 }) * lambda[(k, j)])
            .sum::<f64>()
    })
}

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-14
}

/// Closed-form inner maximizers against 1e5-step projected ascent and the
/// library's own iterative oracle on 20 random instances, to 1e-8.
pub fn check_closed_form_maximizers() -> Check {
    let mut worst = 0.0f64;
    for k in 0..20 {
        let c = random_case(k);
        let l = c.p.smoothness();
        let closed = inner_argmax(&c.p, &c.w, l, &c.x, &c.lambda).map_err(|e| e.to_string())?;
        let shift = shift_ref(&c.w, l, &c.lambda);
        for i in 0..c.p.agents() {
            let xi = c.x.row(i).transpose();
            let yi = quad_dual_ref(
                c.p.agent(i),
                c.p.strong_concavity(),
                c.p.dual_reg(),
                &xi,
                &to_vec(&shift.row(i).transpose()),
                100_000,
            );
            let err = (closed.row(i).transpose() - DVector::from_vec(yi)).amax();
            let it = iterative_dual(&c.p, i, &xi, &shift.row(i).transpose(), 1e-13, 100_000)
                .map_err(|e| e.to_string())?;
            let err_it = (closed.row(i).transpose() - it).amax();
            worst = worst.max(err).max(err_it);
            if err > 1e-8 || err_it > 1e-8 {
                return Err(format!(
                    "case {k} agent {i}: ascent {err:e}, iterative {err_it:e}"
                ));
            }
        }
    }
    Ok(format!("20 instances, max |Δy| = {worst:.2e} (tol 1e-8)"))
}

/// Stationarity measures against a brute-force evaluation from raw
/// coefficients on 20 random instances, to 1e-6 relative.
pub fn check_stationarity_brute_force() -> Check {
    for k in 0..20 {
        let c = random_case(k);
        let p = &c.p;
        let (m, d1) = (p.agents(), p.primal_dim());
        let l = p.smoothness();
        let mu = p.strong_concavity();
        let eta = 0.05;
        let y = project_dual_rows(
            p,
            &normal(&mut ChaCha8Rng::seed_from_u64(k), m, p.dual_dim()),
        )
        .unwrap();
        let s = SwarmState {
            x: c.x.clone(),
            y,
            lambda: c.lambda.clone(),
            dx: DMatrix::zeros(m, d1),
            dy: DMatrix::zeros(m, p.dual_dim()),
            vx: DMatrix::zeros(m, d1),
            vy: DMatrix::zeros(m, p.dual_dim()),
            t: 0,
            samples: 0,
            comms: 0,
        };
        let got = stationarity(p, &c.w, l, &s, eta).map_err(|e| e.to_string())?;

        let xbar: DVector<f64> = DVector::from_fn(d1, |j, _| {
            (0..m).map(|i| c.x[(i, j)]).sum::<f64>() / m as f64
        });
        let shift = shift_ref(&c.w, l, &c.lambda);
        let y_hat: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                quad_dual_ref(
                    p.agent(i),
                    mu,
                    p.dual_reg(),
                    &xbar,
                    &to_vec(&shift.row(i).transpose()),
                    1_000_000,
                )
            })
            .collect();
        let mut gx = DVector::zeros(d1);
        for (i, yi) in y_hat.iter().enumerate() {
            let a = p.agent(i);
            gx += &a.a_mat * &xbar + &a.b_mat * DVector::from_column_slice(yi) + &a.a_vec;
        }
        gx /= m as f64;
        let moved = prox_ref(p.primal_reg(), eta, &to_vec(&(&xbar - &gx * eta)));
        let prox_grad: f64 = xbar
            .iter()
            .zip(&moved)
            .map(|(a, b)| ((a - b) / eta).powi(2))
            .sum();
        let mut consensus = 0.0;
        for i in 0..m {
            for j in 0..d1 {
                consensus += (c.x[(i, j)] - xbar[j]).powi(2);
            }
        }
        consensus *= l * l / m as f64;
        let wm = c.w.weights();
        let mut lam_grad = 0.0;
        for i in 0..m {
            for j in 0..p.dual_dim() {
                let v: f64 = (0..m)
                    .map(|k| (wm[(i, k)] - if i == k { 1.0 } else { 0.0 }) * y_hat[k][j])
                    .sum();
                lam_grad += (l / (2.0 * (m as f64).sqrt()) * v).powi(2);
            }
        }
        if !rel_close(got.prox_grad_norm2, prox_grad, 1e-6) {
            return Err(format!(
                "case {k}: prox-gradient {} vs {prox_grad}",
                got.prox_grad_norm2
            ));
        }
        if !rel_close(got.consensus_term, consensus, 1e-6) {
            return Err(format!(
                "case {k}: consensus {} vs {consensus}",
                got.consensus_term
            ));
        }
        if !rel_close(got.lambda_grad_norm2, lam_grad, 1e-6) {
            return Err(format!(
                "case {k}: multiplier gradient {} vs {lam_grad}",
                got.lambda_grad_norm2
            ));
        }
        if m == 1 && got.lambda_grad_norm2 != 0.0 {
            return Err(format!(
                "case {k}: single agent has nonzero multiplier gradient"
            ));
        }
    }
    Ok("20 instances agree to 1e-6 relative".into())
}

fn batch_mean(
    p: &dyn Problem,
    ids: &[u64],
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let mut gx = DVector::zeros(x.len());
    let mut gy = DVector::zeros(y.len());
    for &s in ids {
        let g = p.sample_grad(0, s, x, y);
        gx += g.x;
        gy += g.y;
    }
    let n = ids.len() as f64;
    (gx / n, gy / n)
}

/// Single-agent prox-GDA driven by a SPIDER, STORM or plain estimator.
pub fn prox_gda_reference(
    p: &dyn Problem,
    kind: EstimatorKind,
    s0: usize,
    steps: StepSizes,
    seed: u64,
    iters: usize,
) -> Vec<(DVector<f64>, DVector<f64>)> {
    let mut rng = agent_rng(seed, 0);
    let mut x = DVector::zeros(p.primal_dim());
    let mut y = p.dual_reg().center(p.dual_dim());
    let ids = draw_batch(p.components(), s0, &mut rng).unwrap();
    let (mut dx, mut dy) = batch_mean(p, &ids, &x, &y);
    let mut out = vec![(x.clone(), y.clone())];
    for t in 1..=iters {
        let xn = prox_eval(p.primal_reg(), steps.eta_x, &(&x - &dx * steps.eta_x)).unwrap();
        let yn = prox_eval(p.dual_reg(), steps.eta_y, &(&y + &dy * steps.eta_y)).unwrap();
        let (size, restart, keep) = match kind {
            EstimatorKind::Spider { q, s1, s2 } => {
                if t % q == 0 {
                    (s1, true, 1.0)
                } else {
                    (s2, false, 1.0)
                }
            }
            EstimatorKind::Storm { beta, batch } => (batch, false, 1.0 - beta),
            EstimatorKind::Plain { batch } => (batch, true, 0.0),
        };
        let ids = draw_batch(p.components(), size, &mut rng).unwrap();
        let (gx, gy) = batch_mean(p, &ids, &xn, &yn);
        if restart {
            dx = gx;
            dy = gy;
        } else {
            let (ox, oy) = batch_mean(p, &ids, &x, &y);
            dx = gx + (&dx - ox) * keep;
            dy = gy + (&dy - oy) * keep;
        }
        x = xn;
        y = yn;
        out.push((x.clone(), y.clone()));
    }
    out
}

pub fn reduction_instance(components: Option<usize>, h: ProxSpec) -> QuadraticNcsc {
    QuadraticNcsc::random(&QuadraticParams {
        agents: 1,
        d1: 4,
        d2: 3,
        components,
        noise: 0.3,
        sigma2: Some(1.0),
        seed: 11,
        g: ProxSpec::L1 { weight: 0.05 },
        h,
        ..Default::default()
    })
    .unwrap()
}

/// Runs the engine with one agent next to [`prox_gda_reference`] for 200
/// iterations and returns the largest coordinate gap.
pub fn check_single_agent(
    p: &QuadraticNcsc,
    kind: EstimatorKind,
    s0: usize,
) -> Result<f64, String> {
    let steps = StepSizes {
        eta_x: 0.05,
        eta_y: 0.2,
        eta_lambda: 0.7,
    };
    let w = MixingMatrix::complete(1).unwrap();
    let mut cfg = EngineConfig::new(kind, s0, steps);
    cfg.seed = 99;
    let mut engine = Engine::new(p, &w, cfg).map_err(|e| e.to_string())?;
    let expected = prox_gda_reference(p, kind, s0, steps, 99, 200);
    let mut worst = 0.0f64;
    for (t, (x, y)) in expected.iter().enumerate() {
        let s = engine.state();
        if s.t != t {
            return Err(format!("{kind:?}: engine at t={} expected {t}", s.t));
        }
        let ex = (s.x.row(0).transpose() - x).amax();
        let ey = (s.y.row(0).transpose() - y).amax();
        worst = worst.max(ex).max(ey);
        if ex > 1e-10 || ey > 1e-10 {
            return Err(format!("{kind:?} t={t}: |Δx|={ex:e} |Δy|={ey:e}"));
        }
        if s.lambda.amax() != 0.0 {
            return Err(format!("{kind:?} t={t}: multipliers moved"));
        }
        if t < 200 {
            engine.step().map_err(|e| e.to_string())?;
        }
    }
    Ok(worst)
}

/// The three single-agent reductions: SPIDER on a finite sum, streaming
/// STORM and plain minibatches.
pub fn check_reductions() -> Check {
    let spider = check_single_agent(
        &reduction_instance(Some(12), ProxSpec::simplex(3)),
        EstimatorKind::Spider {
            q: 5,
            s1: 12,
            s2: 3,
        },
        12,
    )?;
    let storm = check_single_agent(
        &reduction_instance(None, ProxSpec::Nonneg),
        EstimatorKind::Storm {
            beta: 0.3,
            batch: 2,
        },
        4,
    )?;
    let plain = check_single_agent(
        &reduction_instance(Some(12), ProxSpec::Zero),
        EstimatorKind::Plain { batch: 3 },
        3,
    )?;
    Ok(format!("200 iterations, max gap spider {spider:.1e}, storm {storm:.1e}, plain {plain:.1e} (tol 1e-10)"))
}
