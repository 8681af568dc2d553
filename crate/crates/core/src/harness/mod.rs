//! Scenario plumbing, seeded Monte Carlo runs and result export.

pub mod config;
pub mod export;
pub mod presets;
pub mod runner;

use std::path::PathBuf;

use thiserror::Error;

use crate::conditions::{ConditionError, McScenario};
use crate::estimator::{check_gain_assumptions, AssumptionConstants, EstimatorError, GainReport, GainSchedule, MeasurementModel};
use crate::graph::{DelayModel, GraphError};
use crate::linalg::Vector;
use crate::processes::{NoiseModel, ProcessError, ProcessKind};

pub use config::{OutputFlags, ScenarioSpec, SimConfig};
pub use export::{export_csv, export_summary, write_csv, RunSummary};
pub use runner::{monte_carlo, run_replicate, RunMetrics, RunOptions, TrajectoryRecord};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("replicate {replicate} (seed {seed}) failed: {source}")]
    Replicate {
        replicate: u64,
        seed: u64,
        #[source]
        source: Box<HarnessError>,
    },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error(transparent)]
    Condition(#[from] ConditionError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization failed: {0}")]
    Serialize(String),
}

impl HarnessError {
    /// Process exit code: 1 for configuration problems, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            _ => 2,
        }
    }
}

/// A fully resolved simulation scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    /// Whether every ingredient comes from the reference instance, as
    /// opposed to some parameters being chosen here.
    pub reference_instance: bool,
    pub measurement: MeasurementModel,
    pub process: ProcessKind,
    /// Process state at time `-1`.
    pub initial_state: usize,
    pub delays: DelayModel,
    pub noise: NoiseModel,
    pub gains: GainSchedule,
    pub initial_estimate: Vector,
}

impl Scenario {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: String,
        reference_instance: bool,
        measurement: MeasurementModel,
        process: ProcessKind,
        initial_state: usize,
        delays: DelayModel,
        noise: NoiseModel,
        gains: GainSchedule,
        initial_estimate: Vector,
    ) -> Result<Self, HarnessError> {
        let nodes = process.nodes();
        let dim = process.dim();
        let dims_match = process
            .states()
            .iter()
            .all(|s| s.observations.node_dims() == measurement.node_dims);
        if measurement.nodes() != nodes
            || measurement.dim() != dim
            || delays.nodes() != nodes
            || noise.total_dim() != measurement.node_dims.iter().sum::<usize>()
            || initial_estimate.len() != nodes * dim
            || !dims_match
        {
            return Err(HarnessError::Config(format!(
                "scenario {name}: N, n or n_i disagree between measurement, process, delays and noise"
            )));
        }
        if initial_state >= process.states().len() {
            return Err(HarnessError::Config(format!("scenario {name}: initial state out of range")));
        }
        Ok(Self {
            name,
            reference_instance,
            measurement,
            process,
            initial_state,
            delays,
            noise,
            gains,
            initial_estimate,
        })
    }

    pub fn nodes(&self) -> usize {
        self.process.nodes()
    }

    pub fn dim(&self) -> usize {
        self.process.dim()
    }

    /// Bounds read off the finite state space; `c_a` is left for the gain
    /// check to fill in from the schedule.
    pub fn constants(&self) -> AssumptionConstants {
        let states = self.process.states();
        AssumptionConstants {
            nodes: self.nodes(),
            beta_a: states.iter().map(|s| s.graph.max_abs_weight()).fold(0.0, f64::max).max(f64::MIN_POSITIVE),
            beta_h: states.iter().map(|s| s.observations.max_block_norm()).fold(0.0, f64::max),
            beta_v: self.noise.beta_v(),
            c_a: 0.0,
            max_delay: self.delays.max_delay(),
            kappa: None,
        }
    }

    pub fn gain_report(&self, horizon: usize) -> Result<GainReport, HarnessError> {
        Ok(check_gain_assumptions(&self.gains, &self.constants(), horizon.max(2))?)
    }

    /// Condition-estimation view sharing this scenario's random streams.
    pub fn mc_scenario(&self, seed: u64, kappa: f64) -> McScenario {
        McScenario {
            process: self.process.clone(),
            delays: self.delays.clone(),
            gains: self.gains.clone(),
            kappa,
            initial_state: self.initial_state,
            seed,
        }
    }
}
