//! Decentralized variance-reduced minimax optimization.
//!
//! Agents on a gossip graph jointly solve
//! `min_x max_y (1/m) Σ_i [f_i(x, y) + g(x) − h(y)]` by running a
//! Lagrangian-multiplier method with gradient tracking on `x`, a multiplier
//! `Λ` replacing the consensus constraint on `y`, and a SPIDER or STORM
//! variance-reduced gradient estimator per agent.

pub mod engine;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod problems;
pub mod prox;
pub mod topology;
pub mod vr;

pub use engine::{Engine, EngineConfig, Method, StepSizes, SwarmState, TheorySteps};
pub use error::{Error, Result};
pub use exec::Execution;
pub use metrics::StationarityReport;
pub use problems::{Components, Grad, Problem};
pub use prox::ProxSpec;
pub use topology::MixingMatrix;
pub use vr::EstimatorKind;
