//! Run configuration: TOML schema, defaults and static validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vrlm_core::{Execution, Method, ProxSpec};

use crate::error::HarnessError;

fn default_metric_every() -> usize {
    100
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub method: Method,
    /// Number of iterations.
    #[serde(rename = "T")]
    pub iterations: usize,
    #[serde(default = "default_metric_every")]
    pub metric_every: usize,
    /// Master seed; per-run seeds are derived from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Independent repetitions with derived seeds.
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default)]
    pub execution: Execution,
    /// Log real elapsed time; makes `metrics.csv` nondeterministic.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default = "yes")]
    pub check_invariants: bool,
    pub problem: ProblemConfig,
    pub topology: TopologyConfig,
    pub vr: VrConfig,
    pub steps: StepsConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepAxis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemConfig {
    Quadratic(QuadraticConfig),
    Dro(DroConfig),
}

impl ProblemConfig {
    pub fn coupling_l(&self) -> Option<f64> {
        match self {
            ProblemConfig::Quadratic(q) => q.coupling_l,
            ProblemConfig::Dro(d) => d.coupling_l,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadraticConfig {
    pub d1: usize,
    pub d2: usize,
    pub mu: f64,
    /// Components per agent; absent means streaming noise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub noise: f64,
    pub curvature: f64,
    pub coupling: f64,
    pub primal_het: f64,
    pub dual_het: f64,
    pub linear: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    pub seed: u64,
    /// Replaces `L` in the multiplier coupling and the metrics, not in the theory steps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupling_l: Option<f64>,
    pub g: ProxSpec,
    pub h: ProxSpec,
}

impl Default for QuadraticConfig {
    fn default() -> Self {
        QuadraticConfig {
            d1: 5,
            d2: 5,
            mu: 1.0,
            n: None,
            noise: 0.0,
            curvature: 0.5,
            coupling: 0.5,
            primal_het: 0.5,
            dual_het: 0.1,
            linear: 1.0,
            sigma2: None,
            seed: 0,
            coupling_l: None,
            g: ProxSpec::Zero,
            h: ProxSpec::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DroConfig {
    pub mu: f64,
    pub lambda_reg: f64,
    /// CSV or binary dataset; a synthetic two-blob set is generated when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    pub points: usize,
    pub d1: usize,
    pub separation: f64,
    pub data_seed: u64,
    pub partition_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupling_l: Option<f64>,
}

impl Default for DroConfig {
    fn default() -> Self {
        DroConfig {
            mu: 10.0,
            lambda_reg: 5e-4,
            data: None,
            points: 400,
            d1: 10,
            separation: 3.0,
            data_seed: 1,
            partition_seed: 2,
            sigma2: None,
            coupling_l: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Ring,
    Complete,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    pub m: usize,
    /// Row-major mixing weights, required for `custom`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
    /// Use `W^k`; each mixing then costs `k` communication rounds.
    #[serde(default = "one")]
    pub mixing_power: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VrKind {
    Spider,
    Storm,
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VrConfig {
    pub kind: VrKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    /// Initial batch; SPIDER defaults to `S1`, STORM to the theory value.
    #[serde(rename = "S0", default, skip_serializing_if = "Option::is_none")]
    pub s0: Option<usize>,
    #[serde(rename = "S1", default, skip_serializing_if = "Option::is_none")]
    pub s1: Option<usize>,
    #[serde(rename = "S2", default, skip_serializing_if = "Option::is_none")]
    pub s2: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    Theory,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepsConfig {
    pub mode: StepMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// Noise level for the STORM theory; defaults to the problem's `√σ²`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Multiplies every theory step size.
    #[serde(default = "unit")]
    pub scale: f64,
}

/// One sweep axis: a dotted key and the values it takes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<toml::Value>,
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn positive(name: &str, v: Option<f64>) -> Result<(), HarnessError> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => {
            Err(config_err(format!("{name} must be positive, got {x}")))
        }
        _ => Ok(()),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    /// The effective STORM momentum, from `vr.beta` or `steps.beta`.
    pub fn beta(&self) -> Option<f64> {
        self.vr.beta.or(self.steps.beta)
    }

    /// Checks that need no problem instance.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.metric_every == 0 {
            return Err(config_err("metric_every must be ≥ 1"));
        }
        if self.repeats == 0 {
            return Err(config_err("repeats must be ≥ 1"));
        }
        self.validate_problem()?;
        self.validate_topology()?;
        self.validate_vr()?;
        self.validate_steps()?;
        self.validate_sweep()
    }

    fn validate_problem(&self) -> Result<(), HarnessError> {
        match &self.problem {
            ProblemConfig::Quadratic(q) => {
                if q.d1 == 0 || q.d2 == 0 {
                    return Err(config_err("problem dimensions must be ≥ 1"));
                }
                if q.n == Some(0) {
                    return Err(config_err("problem.n must be ≥ 1"));
                }
                positive("problem.mu", Some(q.mu))?;
                positive("problem.coupling_l", q.coupling_l)?;
                if q.noise < 0.0 {
                    return Err(config_err("problem.noise must be ≥ 0"));
                }
                q.g.check()
                    .map_err(|e| config_err(format!("problem.g: {e}")))?;
                q.h.check()
                    .map_err(|e| config_err(format!("problem.h: {e}")))?;
                if let ProxSpec::Simplex { dim, .. } = q.h {
                    if dim != q.d2 {
                        return Err(config_err(format!(
                            "problem.h simplex dim {dim} ≠ d2 = {}",
                            q.d2
                        )));
                    }
                }
            }
            ProblemConfig::Dro(d) => {
                positive("problem.mu", Some(d.mu))?;
                positive("problem.coupling_l", d.coupling_l)?;
                if d.lambda_reg < 0.0 {
                    return Err(config_err("problem.lambda_reg must be ≥ 0"));
                }
                if d.data.is_none() && (d.points == 0 || d.d1 == 0) {
                    return Err(config_err("synthetic DRO data needs points and d1 ≥ 1"));
                }
            }
        }
        Ok(())
    }

    fn validate_topology(&self) -> Result<(), HarnessError> {
        let t = &self.topology;
        if t.m == 0 {
            return Err(config_err("topology.m must be ≥ 1"));
        }
        if t.mixing_power == 0 {
            return Err(config_err("topology.mixing_power must be ≥ 1"));
        }
        match (t.kind, &t.weights) {
            (TopologyKind::Custom, None) => Err(config_err("custom topology needs `weights`")),
            (TopologyKind::Custom, Some(w))
                if w.len() != t.m || w.iter().any(|r| r.len() != t.m) =>
            {
                Err(config_err(format!("topology.weights must be {0}×{0}", t.m)))
            }
            (TopologyKind::Ring | TopologyKind::Complete, Some(_)) => {
                Err(config_err("`weights` is only valid for custom topologies"))
            }
            _ => Ok(()),
        }
    }

    fn validate_vr(&self) -> Result<(), HarnessError> {
        let vr = &self.vr;
        let allowed: &[&str] = match vr.kind {
            VrKind::Spider => &["q", "S0", "S1", "S2"],
            VrKind::Storm => &["S0", "beta", "batch"],
            VrKind::Plain => &["S0", "batch"],
        };
        let present = [
            ("q", vr.q.is_some()),
            ("S0", vr.s0.is_some()),
            ("S1", vr.s1.is_some()),
            ("S2", vr.s2.is_some()),
            ("beta", vr.beta.is_some()),
            ("batch", vr.batch.is_some()),
        ];
        for (name, set) in present {
            if set && !allowed.contains(&name) {
                return Err(config_err(format!(
                    "vr.{name} does not apply to {:?}",
                    vr.kind
                )));
            }
        }
        for (name, v) in [
            ("q", vr.q),
            ("S0", vr.s0),
            ("S1", vr.s1),
            ("S2", vr.s2),
            ("batch", vr.batch),
        ] {
            if v == Some(0) {
                return Err(config_err(format!("vr.{name} must be ≥ 1")));
            }
        }
        if vr.kind == VrKind::Spider && (vr.q.is_none() || vr.s1.is_none() || vr.s2.is_none()) {
            return Err(config_err("SPIDER needs vr.q, vr.S1 and vr.S2"));
        }
        if let (Some(a), Some(b)) = (vr.beta, self.steps.beta) {
            if a != b {
                return Err(config_err(format!(
                    "vr.beta = {a} conflicts with steps.beta = {b}"
                )));
            }
        }
        if self.steps.beta.is_some() && vr.kind != VrKind::Storm {
            return Err(config_err("steps.beta only applies to STORM"));
        }
        if let Some(b) = self.beta() {
            if !(b > 0.0 && b <= 1.0) {
                return Err(config_err(format!("beta must lie in (0, 1], got {b}")));
            }
        }
        Ok(())
    }

    fn validate_steps(&self) -> Result<(), HarnessError> {
        let s = &self.steps;
        positive("steps.eta_x", s.eta_x)?;
        positive("steps.eta_y", s.eta_y)?;
        positive("steps.eta_lambda", s.eta_lambda)?;
        positive("steps.eps", s.eps)?;
        positive("steps.sigma", s.sigma)?;
        positive("steps.scale", Some(s.scale))?;
        match s.mode {
            StepMode::Manual => {
                if s.eta_x.is_none() || s.eta_y.is_none() {
                    return Err(config_err("manual steps need eta_x and eta_y"));
                }
                if s.eta_lambda.is_none() && self.method == Method::Vrlm {
                    return Err(config_err("manual VRLM steps need eta_lambda"));
                }
                if self.vr.kind == VrKind::Storm && self.beta().is_none() {
                    return Err(config_err("manual STORM steps need beta"));
                }
                if s.scale != 1.0 || s.eps.is_some() || s.sigma.is_some() {
                    return Err(config_err(
                        "scale, eps and sigma only apply to theory steps",
                    ));
                }
            }
            StepMode::Theory => {
                if s.eta_x.is_some() || s.eta_y.is_some() || s.eta_lambda.is_some() {
                    return Err(config_err("theory steps are computed; remove eta_x, eta_y and eta_lambda or use manual mode"));
                }
                match self.vr.kind {
                    VrKind::Plain => {
                        return Err(config_err("theory steps need a SPIDER or STORM estimator"))
                    }
                    VrKind::Spider if s.eps.is_some() || s.sigma.is_some() => {
                        return Err(config_err("eps and sigma only apply to STORM theory steps"))
                    }
                    VrKind::Storm if self.beta().is_none() && s.eps.is_none() => {
                        return Err(config_err("STORM theory steps need beta or eps"))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    fn validate_sweep(&self) -> Result<(), HarnessError> {
        let mut seen = Vec::new();
        for axis in &self.sweep {
            if axis.values.is_empty() {
                return Err(config_err(format!(
                    "sweep axis `{}` has no values",
                    axis.key
                )));
            }
            let root = axis.key.split('.').next().unwrap_or_default();
            if axis.key.is_empty() || ["sweep", "out_dir", "repeats"].contains(&root) {
                return Err(config_err(format!("cannot sweep over `{}`", axis.key)));
            }
            if seen.contains(&&axis.key) {
                return Err(config_err(format!(
                    "sweep axis `{}` appears twice",
                    axis.key
                )));
            }
            seen.push(&axis.key);
        }
        Ok(())
    }
}

/// Read, parse and validate a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    RunConfig::from_toml(&text)
}
