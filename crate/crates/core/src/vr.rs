//! Per-agent variance-reduced gradient estimators.
//!
//! Each agent owns one [`AgentEstimator`] with a private random stream derived
//! from the run seed and the agent index, so batches do not depend on the
//! order in which agents are evaluated.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{check_point, Components, Grad, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Recursive estimator with a big batch `s1` every `q` steps and small
    /// batches `s2` in between.
    Spider { q: usize, s1: usize, s2: usize },
    /// Momentum estimator `d = G(z_t) + (1−β)(d_prev − G(z_{t−1}))`.
    Storm { beta: f64, batch: usize },
    /// Plain minibatch gradient, used by the SGDA baseline.
    Plain { batch: usize },
}

impl EstimatorKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EstimatorKind::Spider { q, s1, s2 } if q == 0 || s1 == 0 || s2 == 0 => Err(
                Error::Precondition(format!("SPIDER needs q, S1, S2 ≥ 1 (got {q}, {s1}, {s2})")),
            ),
            EstimatorKind::Storm { beta, .. } if !(0.0..=1.0).contains(&beta) => Err(
                Error::Precondition(format!("STORM β must lie in [0, 1], got {beta}")),
            ),
            EstimatorKind::Storm { batch: 0, .. } | EstimatorKind::Plain { batch: 0 } => {
                Err(Error::Precondition("batch size must be ≥ 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Samples drawn per agent at step `t ≥ 1`.
    pub fn batch_at(&self, t: usize) -> usize {
        match *self {
            EstimatorKind::Spider { q, s1, s2 } => {
                if t.is_multiple_of(q) {
                    s1
                } else {
                    s2
                }
            }
            EstimatorKind::Storm { batch, .. } | EstimatorKind::Plain { batch } => batch,
        }
    }
}

/// Independent, reproducible random stream for one agent.
pub fn agent_rng(seed: u64, agent: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(agent as u64);
    rng
}

/// Draw a batch of sample ids. Finite sums sample without replacement and
/// return every component when `size ≥ n`; streaming problems draw fresh ids.
pub fn draw_batch(components: Components, size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<u64>> {
    if size == 0 {
        return Err(Error::Precondition("batch size must be ≥ 1".into()));
    }
    Ok(match components {
        Components::Finite(n) if size >= n => (0..n as u64).collect(),
        Components::Finite(n) => rand::seq::index::sample(rng, n, size)
            .into_iter()
            .map(|j| j as u64)
            .collect(),
        Components::Streaming => (0..size).map(|_| rng.random()).collect(),
    })
}

#[derive(Debug, Clone)]
struct Memory {
    x: DVector<f64>,
    y: DVector<f64>,
    d: Grad,
}

#[derive(Debug, Clone)]
pub struct AgentEstimator {
    kind: EstimatorKind,
    agent: usize,
    rng: ChaCha8Rng,
    memory: Option<Memory>,
}

impl AgentEstimator {
    pub fn new(kind: EstimatorKind, agent: usize, seed: u64) -> Result<Self> {
        kind.validate()?;
        Ok(AgentEstimator {
            kind,
            agent,
            rng: agent_rng(seed, agent),
            memory: None,
        })
    }

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    /// The estimate produced by the last call, if any.
    pub fn last(&self) -> Option<&Grad> {
        self.memory.as_ref().map(|m| &m.d)
    }

    /// `d⁰ = G(x₀, y₀; B⁰)` with `|B⁰| = s0`.
    pub fn init(
        &mut self,
        p: &dyn Problem,
        x: &DVector<f64>,
        y: &DVector<f64>,
        s0: usize,
    ) -> Result<Grad> {
        check_point(p, x, y)?;
        let batch = draw_batch(p.components(), s0, &mut self.rng)?;
        let d = p.batch_grad(self.agent, &batch, x, y)?;
        self.memory = Some(Memory {
            x: x.clone(),
            y: y.clone(),
            d: d.clone(),
        });
        Ok(d)
    }

    /// Estimate at global step `t ≥ 1` for the new iterate `(x, y)`.
    pub fn step(
        &mut self,
        p: &dyn Problem,
        t: usize,
        x: &DVector<f64>,
        y: &DVector<f64>,
    ) -> Result<Grad> {
        check_point(p, x, y)?;
        let prev = self
            .memory
            .take()
            .ok_or_else(|| Error::Protocol(format!("agent {} stepped before init", self.agent)))?;
        let size = self.kind.batch_at(t);
        let batch = draw_batch(p.components(), size, &mut self.rng)?;
        let d = match self.kind {
            EstimatorKind::Spider { q, .. } if t.is_multiple_of(q) => {
                p.batch_grad(self.agent, &batch, x, y)?
            }
            EstimatorKind::Spider { .. } => {
                let mut d = p.batch_grad(self.agent, &batch, x, y)?;
                d.axpy(-1.0, &p.batch_grad(self.agent, &batch, &prev.x, &prev.y)?);
                d.axpy(1.0, &prev.d);
                d
            }
            EstimatorKind::Storm { beta: 1.0, .. } => p.batch_grad(self.agent, &batch, x, y)?,
            EstimatorKind::Storm { beta, .. } => {
                let mut d = p.batch_grad(self.agent, &batch, x, y)?;
                let mut correction = prev.d.clone();
                correction.axpy(-1.0, &p.batch_grad(self.agent, &batch, &prev.x, &prev.y)?);
                d.axpy(1.0 - beta, &correction);
                d
            }
            EstimatorKind::Plain { .. } => p.batch_grad(self.agent, &batch, x, y)?,
        };
        self.memory = Some(Memory {
            x: x.clone(),
            y: y.clone(),
            d: d.clone(),
        });
        Ok(d)
    }
}
