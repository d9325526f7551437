use std::path::{Path, PathBuf};

use metastable::capacity::SolverKind;
use metastable::potential::DriftConvention;
use metastable::simulate::DomainSpec;
use metastable::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;
pub const OUT_ENV: &str = "METASTABLE_OUT";
pub const DEFAULT_OUT: &str = "metastable-out";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Path to a potential file; relative paths resolve against the config file.
    pub potential: Option<PathBuf>,
    /// Name of a shipped potential, used when `potential` is absent.
    pub builtin: Option<String>,
    pub n: Vec<u32>,
    pub out: Option<PathBuf>,
    pub force: bool,
    pub drift_convention: Option<DriftConvention>,
    pub setup: SetupBlock,
    pub capacity: CapacityBlock,
    pub simulate: SimulateBlock,
    pub verify: VerifyBlock,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SetupBlock {
    pub level: Option<usize>,
    pub component: Option<usize>,
    /// Metastable-set margin ε_N.
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacityBlock {
    pub a: Vec<usize>,
    /// Defaults to the complement of `a`.
    pub b: Option<Vec<usize>>,
    pub solver: SolverKind,
    pub tol: f64,
    pub max_iter: Option<usize>,
    /// Box half-width for the test-function upper bound.
    pub upper_epsilon: Option<f64>,
    /// Tube radius for the flow lower bound.
    pub flow_epsilon: Option<f64>,
}

impl Default for CapacityBlock {
    fn default() -> Self {
        CapacityBlock {
            a: vec![0],
            b: None,
            solver: SolverKind::Cg,
            tol: 1e-10,
            max_iter: None,
            upper_epsilon: None,
            flow_epsilon: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Exit,
    Crossing,
    Trace,
    LowBoundary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateBlock {
    pub experiment: Experiment,
    pub replicas: u64,
    pub seed: u64,
    pub max_jumps: u64,
    /// Write one CSV row per replica.
    pub records: bool,
    /// Exit: the well to leave. Trace: the starting well.
    pub well: usize,
    /// Exit: window height δ_N. Crossing: start-set height.
    pub delta: Option<f64>,
    /// Exit: cap on the window radius.
    pub radius: Option<f64>,
    /// Crossing: box size ε_N. Low-boundary: margin ε_N.
    pub epsilon: Option<f64>,
    /// Crossing: index of the saddle in the component's gluing list.
    pub saddle: usize,
    pub start_at_saddle: bool,
    /// Trace: scale index m (0-based), horizon in units of β_m and the transition floor.
    pub scale: usize,
    pub horizon: f64,
    pub min_transitions: u64,
    /// Low-boundary: domain and start point.
    pub domain: Option<DomainSpec>,
    pub start: Option<Vec<f64>>,
}

impl Default for SimulateBlock {
    fn default() -> Self {
        SimulateBlock {
            experiment: Experiment::Exit,
            replicas: 1000,
            seed: 0,
            max_jumps: metastable::simulate::DEFAULT_MAX_JUMPS,
            records: false,
            well: 0,
            delta: None,
            radius: None,
            epsilon: None,
            saddle: 0,
            start_at_saddle: false,
            scale: 0,
            horizon: 1.0,
            min_transitions: 20,
            domain: None,
            start: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyBlock {
    /// Criterion ids; all of them when empty.
    pub criteria: Vec<usize>,
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config file '{}': {e}", path.display())))?;
    let mut cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("config file '{}': {e}", path.display())))?;
    if let (Some(p), Some(dir)) = (cfg.potential.as_mut(), path.parent()) {
        if p.is_relative() {
            *p = dir.join(&*p);
        }
    }
    Ok(cfg)
}

fn positive(name: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(Error::Config(format!("{name} must be positive, got {x}"))),
        _ => Ok(()),
    }
}

impl RunConfig {
    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn validate_common(&self, needs_n: bool) -> Result<()> {
        if let Some(p) = &self.potential {
            if !p.is_file() {
                return Err(Error::Config(format!("potential file '{}' does not exist", p.display())));
            }
        } else if self.builtin.is_none() {
            return Err(Error::Config("no potential given: set `potential` or `builtin`".into()));
        }
        if needs_n && self.n.is_empty() {
            return Err(Error::Config("no lattice size given: set `n`".into()));
        }
        if let Some(&n) = self.n.iter().find(|&&n| n < 4) {
            return Err(Error::Config(format!("N must be at least 4, got {n}")));
        }
        positive("setup.epsilon", self.setup.epsilon)
    }

    pub fn validate_capacity(&self) -> Result<()> {
        let c = &self.capacity;
        if c.a.is_empty() {
            return Err(Error::Config("capacity.a must be nonempty".into()));
        }
        if let Some(b) = &c.b {
            if b.is_empty() {
                return Err(Error::Config("capacity.b must be nonempty".into()));
            }
            if c.a.iter().any(|x| b.contains(x)) {
                return Err(Error::Config("sets must be disjoint".into()));
            }
        }
        positive("capacity.tol", Some(c.tol))?;
        positive("capacity.upper_epsilon", c.upper_epsilon)?;
        positive("capacity.flow_epsilon", c.flow_epsilon)
    }

    pub fn validate_simulate(&self) -> Result<()> {
        let s = &self.simulate;
        if s.replicas == 0 {
            return Err(Error::Config("simulate.replicas must be positive".into()));
        }
        if s.max_jumps == 0 {
            return Err(Error::Config("simulate.max_jumps must be positive".into()));
        }
        positive("simulate.delta", s.delta)?;
        positive("simulate.radius", s.radius)?;
        positive("simulate.epsilon", s.epsilon)?;
        positive("simulate.horizon", Some(s.horizon))?;
        if s.experiment == Experiment::LowBoundary && s.domain.is_none() {
            return Err(Error::Config("simulate.domain is required for the low-boundary experiment".into()));
        }
        Ok(())
    }

    pub fn validate_verify(&self) -> Result<()> {
        let max = metastable::verify::CRITERIA;
        if let Some(&c) = self.verify.criteria.iter().find(|&&c| c == 0 || c > max) {
            return Err(Error::Config(format!("criterion {c} does not exist (1..={max})")));
        }
        Ok(())
    }
}
