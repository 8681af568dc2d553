//! TOML run configuration and its resolution into a [`Scenario`].
//!
//! ```toml
//! horizon = 10000
//! replicates = 100
//! master_seed = 42
//! sink = "out"
//! scenario = "appendixD"          # or an inline [scenario] table
//!
//! [outputs]
//! mse_curve = true
//! path_traces = false
//! condition_reports = true
//! ```
//!
//! An inline scenario lists joint states (adjacency plus per-node
//! observation rows) and tagged tables for `process`, `delays`, `noise`
//! and `gains`; see [`ScenarioConfig`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::presets;
use super::{HarnessError, Scenario};
use crate::estimator::{GainSchedule, MeasurementModel};
use crate::graph::{DelayModel, WeightedDigraph};
use crate::linalg::{from_rows, Matrix, Vector};
use crate::processes::{JointMarkovProcess, JointState, NoiseKind, NoiseModel, ObservationSet, ProcessKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub scenario: ScenarioSpec,
    pub horizon: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub outputs: OutputFlags,
    #[serde(default = "default_sink")]
    pub sink: PathBuf,
}

fn default_replicates() -> usize {
    1
}

fn default_sink() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputFlags {
    pub mse_curve: bool,
    pub path_traces: bool,
    pub condition_reports: bool,
}

impl Default for OutputFlags {
    fn default() -> Self {
        Self {
            mse_curve: true,
            path_traces: false,
            condition_reports: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSpec {
    Preset(String),
    Inline(Box<ScenarioConfig>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateConfig {
    /// `adjacency[i][j] = a_ij`, weight of the link `j → i`.
    pub adjacency: Vec<Vec<f64>>,
    /// `observations[i]` holds the rows of `H_i`.
    pub observations: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessConfig {
    Markov { transition: Vec<Vec<f64>> },
    Iid { weights: Vec<f64> },
    Deterministic { schedule: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelayConfig {
    None,
    Uniform { max_delay: usize },
    Homogeneous { probabilities: Vec<f64> },
    /// `links[from][to]` is the distribution of the delay on `from → to`.
    Links { max_delay: usize, links: Vec<Vec<Vec<f64>>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    Zero,
    /// One standard deviation per node, or a single shared value.
    Gaussian { sigma: Vec<f64> },
    Uniform { half_width: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GainConfig {
    PowerLaw {
        tau1: f64,
        tau2: f64,
    },
    ShiftedPowerLaw {
        scale_a: f64,
        scale_b: f64,
        offset: f64,
        tau1: f64,
        tau2: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "inline_name")]
    pub name: String,
    pub x0: Vec<f64>,
    /// Initial estimate of every node; zeros when absent.
    #[serde(default)]
    pub initial_estimate: Option<Vec<f64>>,
    pub states: Vec<StateConfig>,
    pub process: ProcessConfig,
    /// Process state at time `-1`.
    #[serde(default)]
    pub initial_state: usize,
    #[serde(default = "no_delays")]
    pub delays: DelayConfig,
    pub noise: NoiseConfig,
    pub gains: GainConfig,
}

fn inline_name() -> String {
    "inline".into()
}

fn no_delays() -> DelayConfig {
    DelayConfig::None
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    pub fn preset(name: &str, horizon: usize, replicates: usize, master_seed: u64) -> Self {
        Self {
            scenario: ScenarioSpec::Preset(name.into()),
            horizon,
            replicates,
            master_seed,
            outputs: OutputFlags::default(),
            sink: default_sink(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.horizon == 0 {
            return Err(HarnessError::Config("horizon must be at least 1".into()));
        }
        if self.replicates == 0 {
            return Err(HarnessError::Config("replicates must be at least 1".into()));
        }
        self.resolve().map(|_| ())
    }

    pub fn resolve(&self) -> Result<Scenario, HarnessError> {
        match &self.scenario {
            ScenarioSpec::Preset(name) => presets::build(name),
            ScenarioSpec::Inline(inline) => inline.build(),
        }
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix, HarnessError> {
    from_rows(rows).ok_or_else(|| HarnessError::Config(format!("{what}: rows have different lengths")))
}

fn per_node(values: &[f64], nodes: usize, what: &str) -> Result<Vec<f64>, HarnessError> {
    match values.len() {
        1 => Ok(vec![values[0]; nodes]),
        n if n == nodes => Ok(values.to_vec()),
        n => Err(HarnessError::Config(format!("{what}: {n} values for {nodes} nodes"))),
    }
}

impl ScenarioConfig {
    pub fn build(&self) -> Result<Scenario, HarnessError> {
        let cfg_err = |e: &dyn std::fmt::Display| HarnessError::Config(e.to_string());
        let dim = self.x0.len();
        if dim == 0 || self.states.is_empty() {
            return Err(HarnessError::Config("x0 and states must be non-empty".into()));
        }
        let mut states = Vec::with_capacity(self.states.len());
        for (l, s) in self.states.iter().enumerate() {
            let graph = WeightedDigraph::new(matrix(&s.adjacency, "adjacency")?).map_err(|e| cfg_err(&e))?;
            let blocks = s
                .observations
                .iter()
                .map(|rows| {
                    if rows.is_empty() {
                        Ok(Matrix::zeros(0, dim))
                    } else {
                        matrix(rows, &format!("state {l} observations"))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            let obs = ObservationSet::new(dim, blocks).map_err(|e| cfg_err(&e))?;
            states.push(JointState::new(obs, graph).map_err(|e| cfg_err(&e))?);
        }
        let nodes = states[0].nodes();
        let node_dims = states[0].observations.node_dims();
        let process = match &self.process {
            ProcessConfig::Markov { transition } => {
                let p = matrix(transition, "transition")?;
                ProcessKind::Markov(std::sync::Arc::new(
                    JointMarkovProcess::new(states, p).map_err(|e| cfg_err(&e))?,
                ))
            }
            ProcessConfig::Iid { weights } => ProcessKind::iid(states, weights).map_err(|e| cfg_err(&e))?,
            ProcessConfig::Deterministic { schedule } => {
                ProcessKind::deterministic(states, schedule.clone()).map_err(|e| cfg_err(&e))?
            }
        };
        if self.initial_state >= process.states().len() {
            return Err(HarnessError::Config("initial_state out of range".into()));
        }
        let delays = match &self.delays {
            DelayConfig::None => DelayModel::delay_free(nodes),
            DelayConfig::Uniform { max_delay } => DelayModel::uniform(nodes, *max_delay),
            DelayConfig::Homogeneous { probabilities } => {
                DelayModel::homogeneous(nodes, probabilities.clone()).map_err(|e| cfg_err(&e))?
            }
            DelayConfig::Links { max_delay, links } => {
                if links.len() != nodes || links.iter().any(|r| r.len() != nodes) {
                    return Err(HarnessError::Config("links must be an N×N table".into()));
                }
                let flat = links.iter().flatten().cloned().collect();
                DelayModel::from_link_probabilities(nodes, *max_delay, flat).map_err(|e| cfg_err(&e))?
            }
        };
        let noise = match &self.noise {
            NoiseConfig::Zero => NoiseModel::zero(node_dims.clone()),
            NoiseConfig::Gaussian { sigma } => NoiseModel::new(
                node_dims.clone(),
                NoiseKind::Gaussian {
                    sigma: per_node(sigma, nodes, "sigma")?,
                },
            )
            .map_err(|e| cfg_err(&e))?,
            NoiseConfig::Uniform { half_width } => NoiseModel::new(
                node_dims.clone(),
                NoiseKind::Uniform {
                    half_width: per_node(half_width, nodes, "half_width")?,
                },
            )
            .map_err(|e| cfg_err(&e))?,
        };
        let gains = match &self.gains {
            GainConfig::PowerLaw { tau1, tau2 } => GainSchedule::power_law(*tau1, *tau2),
            GainConfig::ShiftedPowerLaw {
                scale_a,
                scale_b,
                offset,
                tau1,
                tau2,
            } => GainSchedule::shifted_power_law(*scale_a, *scale_b, *offset, *tau1, *tau2),
        }
        .map_err(|e| cfg_err(&e))?;
        let measurement = MeasurementModel::new(Vector::from_vec(self.x0.clone()), node_dims).map_err(|e| cfg_err(&e))?;
        let initial_estimate = match &self.initial_estimate {
            None => Vector::zeros(nodes * dim),
            Some(v) if v.len() == nodes * dim => Vector::from_vec(v.clone()),
            Some(v) if v.len() == dim => Vector::from_fn(nodes * dim, |r, _| v[r % dim]),
            Some(v) => {
                return Err(HarnessError::Config(format!(
                    "initial_estimate has {} entries, expected {dim} or {}",
                    v.len(),
                    nodes * dim
                )))
            }
        };
        Scenario::new(
            self.name.clone(),
            false,
            measurement,
            process,
            self.initial_state,
            delays,
            noise,
            gains,
            initial_estimate,
        )
    }
}
