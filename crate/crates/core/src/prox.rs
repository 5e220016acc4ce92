//! Closed-form proximal mappings for the primal and dual regularizers.
//!
//! `prox_{ηr}(v) = argmin_y { r(y) + ‖y − v‖² / (2η) }`. All mappings act on a
//! single vector; [`prox_rows`] applies one to every row of a stacked matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feasibility tolerance for indicator regularizers.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProxSpec {
    /// `r ≡ 0`.
    Zero,
    /// `r(y) = weight · ‖y‖₁`.
    L1 { weight: f64 },
    /// Indicator of `{y ∈ ℝ^dim : y ≥ 0, Σy = total}`. `total = 1` is the
    /// probability simplex.
    Simplex {
        dim: usize,
        #[serde(default = "unit_total")]
        total: f64,
    },
    /// Indicator of the nonnegative orthant.
    Nonneg,
}

fn unit_total() -> f64 {
    1.0
}

impl ProxSpec {
    pub fn simplex(dim: usize) -> Self {
        ProxSpec::Simplex { dim, total: 1.0 }
    }

    /// Check parameters independent of the vector the prox is applied to.
    pub fn check(&self) -> Result<()> {
        match *self {
            ProxSpec::L1 { weight } if !(weight >= 0.0 && weight.is_finite()) => Err(
                Error::Precondition(format!("L1 weight must be finite and ≥ 0, got {weight}")),
            ),
            ProxSpec::Simplex { dim, total } => {
                if dim == 0 {
                    Err(Error::Precondition(
                        "simplex dimension must be positive".into(),
                    ))
                } else if !(total > 0.0 && total.is_finite()) {
                    Err(Error::Precondition(format!(
                        "simplex total must be finite and positive, got {total}"
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Regularizer value; indicators evaluate to `+∞` off their set.
    pub fn value(&self, v: &DVector<f64>) -> f64 {
        match *self {
            ProxSpec::Zero => 0.0,
            ProxSpec::L1 { weight } => weight * v.iter().map(|x| x.abs()).sum::<f64>(),
            ProxSpec::Simplex { .. } | ProxSpec::Nonneg => {
                if self.contains(v, FEASIBILITY_TOL) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Whether `v` lies in the domain of the regularizer.
    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        match *self {
            ProxSpec::Zero | ProxSpec::L1 { .. } => v.iter().all(|x| x.is_finite()),
            ProxSpec::Nonneg => v.iter().all(|&x| x >= -tol),
            ProxSpec::Simplex { dim, total } => {
                v.len() == dim && v.iter().all(|&x| x >= -tol) && (v.sum() - total).abs() <= tol
            }
        }
    }

    /// A canonical point of the domain: the origin, or the simplex barycenter.
    pub fn center(&self, dim: usize) -> DVector<f64> {
        match *self {
            ProxSpec::Simplex { total, .. } => DVector::from_element(dim, total / dim as f64),
            _ => DVector::zeros(dim),
        }
    }
}

/// `prox_{step·r}(v)`.
pub fn prox_eval(spec: &ProxSpec, step: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Precondition(format!(
            "prox step must be positive, got {step}"
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("prox input"));
    }
    spec.check()?;
    let mut out = v.clone();
    apply_in_place(spec, step, out.as_mut_slice())?;
    Ok(out)
}

/// Row-wise `prox_{step·r}` of a stacked matrix.
pub fn prox_rows(spec: &ProxSpec, step: f64, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Precondition(format!(
            "prox step must be positive, got {step}"
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("prox input"));
    }
    spec.check()?;
    if matches!(spec, ProxSpec::Zero) {
        return Ok(v.clone());
    }
    let mut out = v.clone();
    let mut buf = vec![0.0; v.ncols()];
    for i in 0..v.nrows() {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = v[(i, j)];
        }
        apply_in_place(spec, step, &mut buf)?;
        for (j, b) in buf.iter().enumerate() {
            out[(i, j)] = *b;
        }
    }
    Ok(out)
}

fn apply_in_place(spec: &ProxSpec, step: f64, v: &mut [f64]) -> Result<()> {
    match *spec {
        ProxSpec::Zero => {}
        ProxSpec::L1 { weight } => {
            let thr = step * weight;
            for x in v.iter_mut() {
                *x = soft_threshold(*x, thr);
            }
        }
        ProxSpec::Nonneg => {
            for x in v.iter_mut() {
                *x = x.max(0.0);
            }
        }
        ProxSpec::Simplex { dim, total } => {
            if v.len() != dim {
                return Err(Error::Dimension {
                    context: "simplex projection",
                    expected: dim,
                    got: v.len(),
                });
            }
            project_simplex(v, total);
        }
    }
    Ok(())
}

pub fn soft_threshold(x: f64, thr: f64) -> f64 {
    if x > thr {
        x - thr
    } else if x < -thr {
        x + thr
    } else {
        0.0
    }
}

/// Euclidean projection onto `{y ≥ 0, Σy = total}` by sorting.
fn project_simplex(v: &mut [f64], total: f64) {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - total) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}
