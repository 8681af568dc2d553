//! Seeded replicate execution and Monte Carlo aggregation.

use log::info;
use rayon::prelude::*;
use serde::Serialize;

use super::{HarnessError, Scenario, SimConfig};
use crate::conditions::{
    infimum_scan, switching_criteria_check, moment_bound, ConditionReport, MomentBound, ScanQuantity, SwitchingCriteria,
};
use crate::estimator::{network_step, GainReport, NetworkState, StepInput, StepMode};
use crate::graph::DelayRealization;
use crate::linalg::Vector;
use crate::processes::{sample_delays, stream_rng, ProcessDriver, StreamPurpose};

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "DCOE_WORKERS";

/// Window length used by the condition reports attached to runs.
pub const REPORT_WINDOW: usize = 1;
/// Largest window index scanned by attached condition reports.
pub const REPORT_M_MAX: usize = 50;
/// Largest window index of the sampled delayed scan.
pub const REPORT_DELAYED_M_MAX: usize = 5;
/// Continuations per window of the sampled delayed scan.
pub const REPORT_SAMPLES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub record_states: bool,
    pub record_draws: bool,
    pub mode: StepMode,
}

/// Random inputs of one step, enough to replay it.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDraw {
    pub state: usize,
    pub delays: DelayRealization,
    pub noise: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub replicate: u64,
    pub master_seed: u64,
    /// `sq_errors[k][i] = ‖x_i(k) - x0‖²`, k = 0..=K.
    pub sq_errors: Vec<Vec<f64>>,
    /// `‖x(k) - 1⊗x0‖`.
    pub error_norms: Vec<f64>,
    /// `x(k)`, k = 0..=K, when requested.
    pub states: Option<Vec<Vector>>,
    /// Draws for k = 0..K-1, when requested.
    pub draws: Option<Vec<StepDraw>>,
}

fn squared_errors(x: &Vector, x0: &Vector, nodes: usize) -> Vec<f64> {
    let n = x0.len();
    (0..nodes)
        .map(|i| (x.rows(i * n, n) - x0).norm_squared())
        .collect()
}

/// Runs one replicate for `horizon` steps. Graph, noise and delay draws
/// come from separate streams, so toggling delays leaves the others intact.
pub fn run_replicate(
    scenario: &Scenario,
    horizon: usize,
    master_seed: u64,
    replicate: u64,
    opts: RunOptions,
) -> Result<TrajectoryRecord, HarnessError> {
    let nodes = scenario.nodes();
    let n = scenario.dim();
    let mut driver = ProcessDriver::new(
        scenario.process.clone(),
        scenario.initial_state,
        stream_rng(master_seed, replicate, StreamPurpose::Graph),
    )?;
    let mut noise_rng = stream_rng(master_seed, replicate, StreamPurpose::Noise);
    let mut delay_rng = stream_rng(master_seed, replicate, StreamPurpose::Delay);
    let mut state = NetworkState::new(nodes, n, scenario.initial_estimate.clone(), scenario.delays.max_delay())?;
    let x0 = &scenario.measurement.x0;
    let target = scenario.measurement.consensus_target();

    let mut sq_errors = Vec::with_capacity(horizon + 1);
    let mut error_norms = Vec::with_capacity(horizon + 1);
    let mut states = opts.record_states.then(|| Vec::with_capacity(horizon + 1));
    let mut draws = opts.record_draws.then(|| Vec::with_capacity(horizon));
    let mut record = |x: &Vector, states: &mut Option<Vec<Vector>>| {
        sq_errors.push(squared_errors(x, x0, nodes));
        error_norms.push((x - &target).norm());
        if let Some(s) = states.as_mut() {
            s.push(x.clone());
        }
    };
    record(state.current(), &mut states);

    for k in 0..horizon {
        let idx = driver.next_index(k);
        let joint = driver.state(idx);
        let delays = sample_delays(&scenario.delays, k, &mut delay_rng)?;
        let v = scenario.noise.sample(&mut noise_rng);
        let z = scenario.measurement.measure(&joint.observations.stacked(), &v)?;
        let (a, b) = scenario.gains.gains(k);
        let input = StepInput {
            observations: &joint.observations,
            graph: &joint.graph,
            delays: &delays,
            innovation_gain: a,
            consensus_gain: b,
        };
        network_step(&mut state, &input, &z, opts.mode)?;
        record(state.current(), &mut states);
        if let Some(d) = draws.as_mut() {
            d.push(StepDraw {
                state: idx,
                delays,
                noise: v,
            });
        }
    }
    Ok(TrajectoryRecord {
        replicate,
        master_seed,
        sq_errors,
        error_norms,
        states,
        draws,
    })
}

/// Condition checks attached to a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionBundle {
    pub gains: GainReport,
    pub moment_bound: MomentBound,
    pub switching: SwitchingCriteria,
    pub excitation: ConditionReport,
    /// `λ_m^h - Δ_m^h` profile; only for delayed scenarios.
    pub delayed_excitation: Option<ConditionReport>,
}

impl ConditionBundle {
    pub fn verdict(&self) -> bool {
        self.excitation.verdict && self.delayed_excitation.as_ref().is_none_or(|r| r.verdict)
    }
}

pub fn condition_bundle(scenario: &Scenario, horizon: usize, seed: u64) -> Result<ConditionBundle, HarnessError> {
    let gains = scenario.gain_report(horizon)?;
    let chain = scenario.process.as_markov()?;
    let kappa = gains.gain_bound.kappa_star;
    let mc = scenario.mc_scenario(seed, kappa);
    let excitation = infimum_scan(&mc, ScanQuantity::Lambda, REPORT_WINDOW, REPORT_M_MAX, 0, 0.0)?;
    let delayed_excitation = if scenario.delays.is_delay_free() {
        None
    } else {
        Some(infimum_scan(
            &mc,
            ScanQuantity::LambdaMinusDelta,
            REPORT_WINDOW,
            REPORT_DELAYED_M_MAX,
            REPORT_SAMPLES,
            0.0,
        )?)
    };
    Ok(ConditionBundle {
        gains,
        moment_bound: moment_bound(chain.states()),
        switching: switching_criteria_check(&chain)?,
        excitation,
        delayed_excitation,
    })
}

/// Replicate-averaged error curves.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub scenario: String,
    pub horizon: usize,
    pub replicates: usize,
    pub master_seed: u64,
    /// `node_mse[k][i]`, k = 0..=K.
    pub node_mse: Vec<Vec<f64>>,
    pub node_stderr: Vec<Vec<f64>>,
    /// Average of the per-node MSEs.
    pub network_mse: Vec<f64>,
    pub network_stderr: Vec<f64>,
    /// Per replicate, `max_i ‖x_i(k) - x0‖` over k.
    pub path_max_error: Option<Vec<Vec<f64>>>,
    pub conditions: Option<ConditionBundle>,
}

impl RunMetrics {
    pub fn nodes(&self) -> usize {
        self.node_mse.first().map_or(0, Vec::len)
    }

    pub fn final_network_mse(&self) -> f64 {
        *self.network_mse.last().unwrap_or(&f64::NAN)
    }
}

fn mean_and_stderr(values: impl Iterator<Item = f64> + Clone, r: usize) -> (f64, f64) {
    let rf = r as f64;
    let mean = values.clone().sum::<f64>() / rf;
    if r < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (rf - 1.0);
    (mean, (var / rf).sqrt())
}

/// Aggregates per-replicate records in replicate order.
pub fn aggregate(scenario: &Scenario, records: &[TrajectoryRecord], master_seed: u64) -> RunMetrics {
    let r = records.len();
    let horizon = records.first().map_or(0, |t| t.sq_errors.len().saturating_sub(1));
    let nodes = scenario.nodes();
    let mut node_mse = Vec::with_capacity(horizon + 1);
    let mut node_stderr = Vec::with_capacity(horizon + 1);
    let mut network_mse = Vec::with_capacity(horizon + 1);
    let mut network_stderr = Vec::with_capacity(horizon + 1);
    for k in 0..=horizon {
        let (m, s): (Vec<f64>, Vec<f64>) = (0..nodes)
            .map(|i| mean_and_stderr(records.iter().map(|t| t.sq_errors[k][i]), r))
            .unzip();
        node_mse.push(m);
        node_stderr.push(s);
        let (nm, ns) = mean_and_stderr(
            records
                .iter()
                .map(|t| t.sq_errors[k].iter().sum::<f64>() / nodes as f64),
            r,
        );
        network_mse.push(nm);
        network_stderr.push(ns);
    }
    RunMetrics {
        scenario: scenario.name.clone(),
        horizon,
        replicates: r,
        master_seed,
        node_mse,
        node_stderr,
        network_mse,
        network_stderr,
        path_max_error: None,
        conditions: None,
    }
}

fn worker_count() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.parse().ok().filter(|&w| w > 0)
}

/// Runs all replicates of `cfg` on a worker pool and aggregates them.
/// The first failing replicate aborts the run.
pub fn monte_carlo(cfg: &SimConfig) -> Result<RunMetrics, HarnessError> {
    cfg.validate()?;
    let scenario = cfg.resolve()?;
    let opts = RunOptions::default();
    let run_all = || -> Result<Vec<TrajectoryRecord>, HarnessError> {
        (0..cfg.replicates as u64)
            .into_par_iter()
            .map(|rep| {
                run_replicate(&scenario, cfg.horizon, cfg.master_seed, rep, opts).map_err(|e| {
                    HarnessError::Replicate {
                        replicate: rep,
                        seed: cfg.master_seed,
                        source: Box::new(e),
                    }
                })
            })
            .collect()
    };
    let records = match worker_count() {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?
            .install(run_all)?,
        None => run_all()?,
    };
    info!(
        "{}: {} replicates x {} steps finished",
        scenario.name, cfg.replicates, cfg.horizon
    );
    let mut metrics = aggregate(&scenario, &records, cfg.master_seed);
    if cfg.outputs.path_traces {
        metrics.path_max_error = Some(
            records
                .iter()
                .map(|t| {
                    t.sq_errors
                        .iter()
                        .map(|row| row.iter().copied().fold(0.0, f64::max).sqrt())
                        .collect()
                })
                .collect(),
        );
    }
    if cfg.outputs.condition_reports {
        metrics.conditions = Some(condition_bundle(&scenario, cfg.horizon, cfg.master_seed)?);
    }
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{GainSchedule, MeasurementModel};
    use crate::graph::{DelayModel, WeightedDigraph};
    use crate::linalg::Matrix;
    use crate::processes::{JointState, NoiseModel, ObservationSet, ProcessKind};

    fn scalar_scenario() -> Scenario {
        let obs = ObservationSet::new(1, vec![Matrix::identity(1, 1)]).unwrap();
        let state = JointState::new(obs, WeightedDigraph::empty(1)).unwrap();
        Scenario::new(
            "scalar".into(),
            false,
            MeasurementModel::new(Vector::from_element(1, 2.0), vec![1]).unwrap(),
            ProcessKind::fixed(state),
            0,
            DelayModel::delay_free(1),
            NoiseModel::zero(vec![1]),
            GainSchedule::power_law(1.0, 1.0).unwrap(),
            Vector::zeros(1),
        )
        .unwrap()
    }

    #[test]
    fn noiseless_scalar_recursion_settles() {
        let t = run_replicate(&scalar_scenario(), 20, 1, 0, RunOptions::default()).unwrap();
        assert_eq!(t.error_norms.len(), 21);
        // a(0) = 1 moves the estimate straight onto x0.
        assert_eq!(t.error_norms[0], 2.0);
        assert!(t.error_norms[1..].iter().all(|&e| e == 0.0));
    }

    #[test]
    fn replicates_are_deterministic() {
        let s = super::super::presets::build("appendixD-delayed").unwrap();
        let opts = RunOptions {
            record_states: true,
            record_draws: true,
            mode: StepMode::PerNode,
        };
        let a = run_replicate(&s, 30, 11, 2, opts).unwrap();
        let b = run_replicate(&s, 30, 11, 2, opts).unwrap();
        assert_eq!(a, b);
        let c = run_replicate(&s, 30, 11, 3, opts).unwrap();
        assert_ne!(a.error_norms, c.error_norms);
    }

    #[test]
    fn single_replicate_metrics_match_record() {
        let cfg = SimConfig::preset("remark5", 40, 1, 5);
        let m = monte_carlo(&cfg).unwrap();
        let s = cfg.resolve().unwrap();
        let t = run_replicate(&s, 40, 5, 0, RunOptions::default()).unwrap();
        assert_eq!(m.network_mse.len(), 41);
        for k in 0..=40 {
            assert_eq!(m.node_mse[k], t.sq_errors[k]);
            assert!(m.node_stderr[k].iter().all(|&v| v == 0.0));
        }
    }
}
