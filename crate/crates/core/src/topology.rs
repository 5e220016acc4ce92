//! Gossip mixing matrices.
//!
//! A [`MixingMatrix`] is only obtainable through [`MixingMatrix::validate`] (or
//! one of the builders, which call it), so every instance satisfies
//!
//! * `Wᵀ1 = 1` and `Null(W − I) = Span{1}`,
//! * `ρ = ‖W − 11ᵀ/m‖₂ < 1`,
//! * `‖W − I‖₂ ≤ 2`,
//!
//! and carries its exact spectral quantity `ρ`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Absolute tolerance on structural equalities.
pub const STRUCTURE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    weights: DMatrix<f64>,
    /// `W − I`, cached because both the multiplier and dual updates use it.
    laplacian: DMatrix<f64>,
    laplacian_t: DMatrix<f64>,
    rho: f64,
    symmetric: bool,
}

impl MixingMatrix {
    /// Ring where each agent weights itself and both neighbours by 1/3.
    pub fn ring(m: usize) -> Result<Self> {
        if m < 3 {
            return Err(Error::InvalidTopology(format!(
                "a ring needs at least 3 agents, got {m}"
            )));
        }
        let third = 1.0 / 3.0;
        let w = DMatrix::from_fn(m, m, |i, j| {
            let d = (i + m - j) % m;
            if d == 0 || d == 1 || d == m - 1 {
                third
            } else {
                0.0
            }
        });
        Self::validate(w)
    }

    /// Exact averaging `W = 11ᵀ/m`.
    pub fn complete(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidTopology(
                "agent count must be positive".into(),
            ));
        }
        Self::validate(DMatrix::from_element(m, m, 1.0 / m as f64))
    }

    /// Check the mixing assumptions on a raw matrix and compute `ρ`.
    pub fn validate(w: DMatrix<f64>) -> Result<Self> {
        let m = w.nrows();
        if m == 0 || w.ncols() != m {
            return Err(Error::InvalidTopology(format!(
                "mixing matrix must be square and non-empty, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mixing matrix"));
        }

        for j in 0..m {
            let s: f64 = w.column(j).sum();
            if (s - 1.0).abs() > STRUCTURE_TOL {
                return Err(Error::AssumptionViolation {
                    condition: "column sums (Wᵀ1 = 1)",
                    detail: format!("column {j} sums to {s}"),
                });
            }
        }

        let eye = DMatrix::<f64>::identity(m, m);
        let laplacian = &w - &eye;

        // Null(W − I) = Span{1}: 1 is in the null space and the null space is
        // one dimensional.
        for i in 0..m {
            let s: f64 = laplacian.row(i).sum();
            if s.abs() > STRUCTURE_TOL {
                return Err(Error::AssumptionViolation {
                    condition: "null space (Null(W − I) = Span{1})",
                    detail: format!("(W − I)1 has entry {s} at row {i}"),
                });
            }
        }
        let sv = laplacian.clone().singular_values();
        let zero_tol = STRUCTURE_TOL * sv.max().max(1.0);
        let nullity = sv.iter().filter(|&&s| s <= zero_tol).count();
        if nullity != 1 {
            return Err(Error::AssumptionViolation {
                condition: "null space (Null(W − I) = Span{1})",
                detail: format!("W − I has a {nullity}-dimensional null space"),
            });
        }

        let symmetric = is_symmetric(&w);
        let centered = &w - DMatrix::from_element(m, m, 1.0 / m as f64);
        let rho = spectral_norm(&centered, symmetric);
        if rho >= 1.0 - STRUCTURE_TOL {
            return Err(Error::AssumptionViolation {
                condition: "spectral gap (ρ < 1)",
                detail: format!("ρ = {rho}"),
            });
        }

        let lap_norm = spectral_norm(&laplacian, symmetric);
        if lap_norm > 2.0 + STRUCTURE_TOL {
            return Err(Error::AssumptionViolation {
                condition: "‖W − I‖₂ ≤ 2",
                detail: format!("‖W − I‖₂ = {lap_norm}"),
            });
        }

        let laplacian_t = laplacian.transpose();
        Ok(Self {
            weights: w,
            laplacian,
            laplacian_t,
            rho,
            symmetric,
        })
    }

    /// `Wᵏ`, the operator applied by `k` back-to-back gossip rounds.
    pub fn power(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Precondition(
                "mixing power must be at least 1".into(),
            ));
        }
        let mut acc = self.weights.clone();
        for _ in 1..k {
            acc = &acc * &self.weights;
        }
        Self::validate(acc)
    }

    pub fn agents(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// `W X`.
    pub fn mix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.weights * x
    }

    /// `(W − I) X`.
    pub fn laplacian_apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.laplacian * x
    }

    /// `(W − I)ᵀ X`.
    pub fn laplacian_t_apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.laplacian_t * x
    }
}

fn is_symmetric(w: &DMatrix<f64>) -> bool {
    let m = w.nrows();
    (0..m).all(|i| (0..i).all(|j| (w[(i, j)] - w[(j, i)]).abs() <= 1e-15))
}

/// Spectral norm, via the symmetric eigendecomposition when possible.
fn spectral_norm(a: &DMatrix<f64>, symmetric: bool) -> f64 {
    if symmetric {
        // Symmetrize to remove representation noise below the symmetry check.
        let s = (a + a.transpose()) * 0.5;
        SymmetricEigen::new(s)
            .eigenvalues
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    } else {
        a.clone().singular_values().max()
    }
}

/// Column means `(1/m) 1ᵀ X` as a vector.
pub fn column_mean(x: &DMatrix<f64>) -> nalgebra::DVector<f64> {
    let m = x.nrows() as f64;
    nalgebra::DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / m))
}

/// Consensus error `X − 1 x̄ᵀ`.
pub fn consensus_error(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = column_mean(x);
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        for (v, mu) in row.iter_mut().zip(mean.iter()) {
            *v -= mu;
        }
    }
    out
}
