//! Built-in scenarios.

use std::sync::Arc;

use super::{HarnessError, Scenario};
use crate::estimator::{GainSchedule, MeasurementModel};
use crate::graph::{DelayModel, WeightedDigraph};
use crate::linalg::{Matrix, Vector};
use crate::processes::{JointMarkovProcess, JointState, NoiseKind, NoiseModel, ObservationSet, ProcessKind};

/// Names accepted by [`build`].
pub const PRESETS: [&str; 3] = ["remark5", "appendixD", "appendixD-delayed"];

/// Noise standard deviation shared by all presets.
pub const PRESET_SIGMA: f64 = 0.1;

/// Delay bound of the delayed four-node preset.
pub const DELAYED_MAX_DELAY: usize = 3;

pub fn describe(name: &str) -> Option<&'static str> {
    match name {
        "remark5" => Some("two nodes, a12 = 1, a21 = 0.3, H1 = 0, H2 = 1, equal gains, no delays"),
        "appendixD" => Some("four nodes, n = 13, switching between a 4-cycle and two symmetric pairs"),
        "appendixD-delayed" => Some("as appendixD with uniform link delays on {0,1,2,3}"),
        _ => None,
    }
}

pub fn build(name: &str) -> Result<Scenario, HarnessError> {
    match name {
        "remark5" => two_node(),
        "appendixD" => four_node(false),
        "appendixD-delayed" => four_node(true),
        other => Err(HarnessError::Config(format!(
            "unknown preset '{other}' (available: {})",
            PRESETS.join(", ")
        ))),
    }
}

fn scalar(v: f64) -> Matrix {
    Matrix::from_element(1, 1, v)
}

/// The two-node network whose graph is unbalanced yet jointly excited.
pub fn two_node_state() -> JointState {
    let graph = WeightedDigraph::from_rows(&[vec![0.0, 1.0], vec![0.3, 0.0]]).expect("valid adjacency");
    let obs = ObservationSet::new(1, vec![scalar(0.0), scalar(1.0)]).expect("valid observations");
    JointState::new(obs, graph).expect("consistent state")
}

fn two_node() -> Result<Scenario, HarnessError> {
    let state = two_node_state();
    Scenario::new(
        "remark5".into(),
        false,
        MeasurementModel::new(Vector::from_element(1, 1.0), vec![1, 1])?,
        ProcessKind::fixed(state),
        0,
        DelayModel::delay_free(2),
        NoiseModel::new(
            vec![1, 1],
            NoiseKind::Gaussian {
                sigma: vec![PRESET_SIGMA; 2],
            },
        )?,
        GainSchedule::power_law(1.0, 1.0)?,
        Vector::zeros(2),
    )
}

const H1: [[f64; 4]; 5] = [
    [-1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, -1.0],
    [1.0, 0.0, 0.0, -1.0],
    [-1.0, 0.0, 0.0, -1.0],
    [-1.0, 0.0, -1.0, 3.0],
];

const H2: [[f64; 8]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0],
    [0.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
    [0.0, 1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -1.0],
    [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, -1.0],
    [0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, 0.0],
];

const H3: [[f64; 9]; 6] = [
    [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0],
    [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0, 0.0],
    [-1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 1.0, 0.0],
    [-1.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 3.0, -1.0],
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0],
];

const H4: [[f64; 6]; 4] = [
    [1.0, -1.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0, 0.0, 0.0, -1.0],
    [-1.0, 0.0, 0.0, 0.0, -1.0, 2.0],
    [0.0, 1.0, -1.0, 0.0, 0.0, 0.0],
];

/// Parameter dimension of the four-node scenario.
pub const FOUR_NODE_DIM: usize = 13;

fn padded<const C: usize>(rows: &[[f64; C]], left: usize) -> Matrix {
    let mut m = Matrix::zeros(rows.len(), FOUR_NODE_DIM);
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            m[(i, left + j)] = *v;
        }
    }
    m
}

/// The four zero-padded observation matrices, 5, 7, 6 and 4 rows by 13.
pub fn four_node_observations() -> Vec<Matrix> {
    vec![padded(&H1, 0), padded(&H2, 0), padded(&H3, 4), padded(&H4, 7)]
}

/// Directed ring 1 → 2 → 3 → 4 → 1.
pub fn ring_graph() -> WeightedDigraph {
    let mut a = Matrix::zeros(4, 4);
    for from in 0..4 {
        a[((from + 1) % 4, from)] = 1.0;
    }
    WeightedDigraph::new(a).expect("valid ring")
}

/// Undirected pairs {1,3} and {2,4}.
pub fn pairs_graph() -> WeightedDigraph {
    let mut a = Matrix::zeros(4, 4);
    for (i, j) in [(0, 2), (1, 3)] {
        a[(i, j)] = 1.0;
        a[(j, i)] = 1.0;
    }
    WeightedDigraph::new(a).expect("valid pairs")
}

/// Uniform switching between the ring and the pairs.
pub fn four_node_chain() -> JointMarkovProcess {
    let obs = ObservationSet::new(FOUR_NODE_DIM, four_node_observations()).expect("valid observations");
    let states = vec![
        JointState::new(obs.clone(), ring_graph()).expect("consistent state"),
        JointState::new(obs, pairs_graph()).expect("consistent state"),
    ];
    JointMarkovProcess::new(states, Matrix::from_element(2, 2, 0.5)).expect("valid chain")
}

/// Gains of the four-node presets.
pub fn four_node_gains() -> GainSchedule {
    GainSchedule::shifted_power_law(6.0, 12.0, 1000.0, 0.6, 0.6).expect("valid gains")
}

/// True parameter of the four-node presets.
pub fn four_node_parameter() -> Vector {
    Vector::from_fn(FOUR_NODE_DIM, |j, _| if j % 2 == 0 { 1.0 } else { -1.0 })
}

fn four_node(delayed: bool) -> Result<Scenario, HarnessError> {
    let chain = four_node_chain();
    let node_dims = chain.states()[0].observations.node_dims();
    let delays = if delayed {
        DelayModel::uniform(4, DELAYED_MAX_DELAY)
    } else {
        DelayModel::delay_free(4)
    };
    Scenario::new(
        if delayed { "appendixD-delayed" } else { "appendixD" }.into(),
        false,
        MeasurementModel::new(four_node_parameter(), node_dims.clone())?,
        ProcessKind::Markov(Arc::new(chain)),
        0,
        delays,
        NoiseModel::new(
            node_dims,
            NoiseKind::Gaussian {
                sigma: vec![PRESET_SIGMA; 4],
            },
        )?,
        four_node_gains(),
        Vector::zeros(4 * FOUR_NODE_DIM),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_builds() {
        for name in PRESETS {
            let s = build(name).unwrap();
            assert_eq!(s.name, name);
            assert!(describe(name).is_some());
        }
        assert!(build("missing").is_err());
    }

    #[test]
    fn observation_padding_layout() {
        let h = four_node_observations();
        let shapes: Vec<_> = h.iter().map(|m| m.shape()).collect();
        assert_eq!(shapes, vec![(5, 13), (7, 13), (6, 13), (4, 13)]);
        assert_eq!(h[0].column(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 0.0, 1.0, -1.0, -1.0]);
        assert!(h[0].columns(4, 9).iter().all(|&v| v == 0.0));
        assert!(h[1].columns(8, 5).iter().all(|&v| v == 0.0));
        assert!(h[2].columns(0, 4).iter().all(|&v| v == 0.0));
        assert!(h[3].columns(0, 7).iter().all(|&v| v == 0.0));
        assert_eq!(h[2][(4, 12)], -1.0);
        assert_eq!(h[3][(2, 12)], 2.0);
    }

    #[test]
    fn four_node_graphs_are_balanced() {
        for g in [ring_graph(), pairs_graph()] {
            assert!(g.is_balanced(1e-12));
        }
        assert!(ring_graph().has_spanning_tree().unwrap());
        assert!(!pairs_graph().has_spanning_tree().unwrap());
    }
}
