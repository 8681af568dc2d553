//! Random instance generators and brute-force oracles shared by the
//! integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use dcoe::auxiliary::AuxiliarySystem;
use dcoe::conditions::{FrozenPrefix, McScenario};
use dcoe::estimator::{admissible_gain_bound, AssumptionConstants, GainSchedule};
use dcoe::graph::{delayed_adjacency_blocks, symmetrized_laplacian, DelayModel, DelayRealization, WeightedDigraph};
use dcoe::linalg::{kron_identity, min_eigenvalue, spectral_norm, symmetric_part, Matrix};
use dcoe::processes::{JointMarkovProcess, JointState, ObservationSet, ProcessKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Nonnegative weights in `[0.1, 1]`, each link present with probability `density`.
pub fn random_graph(rng: &mut impl Rng, nodes: usize, density: f64) -> WeightedDigraph {
    let a = Matrix::from_fn(nodes, nodes, |i, j| {
        if i != j && rng.random::<f64>() < density {
            rng.random_range(0.1..=1.0)
        } else {
            0.0
        }
    });
    WeightedDigraph::new(a).unwrap()
}

/// Per-node row counts, each at most `min(max_rows, dim)`.
pub fn random_rows(rng: &mut impl Rng, nodes: usize, dim: usize, max_rows: usize) -> Vec<usize> {
    (0..nodes).map(|_| rng.random_range(0..=max_rows.min(dim))).collect()
}

/// Blocks with the given row counts and entries in `[-1, 1]`.
pub fn random_observations(rng: &mut impl Rng, dim: usize, rows: &[usize]) -> ObservationSet {
    let blocks = rows
        .iter()
        .map(|&m| Matrix::from_fn(m, dim, |_, _| rng.random_range(-1.0..=1.0)))
        .collect();
    ObservationSet::new(dim, blocks).unwrap()
}

pub fn random_realization(rng: &mut impl Rng, nodes: usize, max_delay: usize) -> DelayRealization {
    let lags = (0..nodes * nodes)
        .map(|e| {
            if e / nodes == e % nodes {
                0
            } else {
                rng.random_range(0..=max_delay)
            }
        })
        .collect();
    DelayRealization::new(nodes, max_delay, lags).unwrap()
}

pub fn random_stochastic(rng: &mut impl Rng, states: usize) -> Matrix {
    let mut p = Matrix::from_fn(states, states, |_, _| rng.random_range(0.05..1.0));
    for mut row in p.row_iter_mut() {
        let s: f64 = row.iter().sum();
        row /= s;
    }
    p
}

/// Gains with `a = C_a b` and `sup b` at `fraction` of the admissible bound.
pub fn bounded_gains(states: &[JointState], max_delay: usize, fraction: f64) -> (GainSchedule, AssumptionConstants, f64) {
    let c_a = 1.5;
    let constants = AssumptionConstants {
        nodes: states[0].nodes(),
        beta_a: states.iter().map(|s| s.graph.max_abs_weight()).fold(1e-3, f64::max),
        beta_h: states.iter().map(|s| s.observations.max_block_norm()).fold(0.0, f64::max),
        beta_v: 1.0,
        c_a,
        max_delay,
        kappa: None,
    };
    let bound = admissible_gain_bound(&constants);
    let s = fraction * bound.bound;
    let gains = GainSchedule::shifted_power_law(c_a * s, s, 0.0, 0.8, 0.8).unwrap();
    (gains, constants, bound.kappa_star)
}

/// Two-state joint chain on two nodes with scalar parameters.
pub fn tiny_chain(rng: &mut impl Rng) -> JointMarkovProcess {
    let states: Vec<JointState> = (0..2)
        .map(|_| {
            let g = random_graph(rng, 2, 1.0);
            let obs = ObservationSet::new(
                1,
                (0..2)
                    .map(|_| Matrix::from_element(1, 1, rng.random_range(-1.0..=1.0)))
                    .collect(),
            )
            .unwrap();
            JointState::new(obs, g).unwrap()
        })
        .collect();
    JointMarkovProcess::new(states, random_stochastic(rng, 2)).unwrap()
}

pub fn tiny_scenario(chain: JointMarkovProcess, gains: GainSchedule, seed: u64) -> McScenario {
    McScenario {
        process: ProcessKind::Markov(Arc::new(chain)),
        delays: DelayModel::uniform(2, 1),
        gains,
        kappa: 0.5,
        initial_state: 0,
        seed,
    }
}

/// Exact window quantities by enumerating every path of states and link
/// delays. Only for two nodes, `n = 1`, maximum delay one and uniform delays.
pub struct ExactWindow {
    pub lambda: f64,
    pub lambda_prime: f64,
    pub delta: f64,
}

struct PathNode {
    prob: f64,
    state: usize,
    // F(k-1) of the path so far
    f_prev: Matrix,
    lambda_acc: Matrix,
    prime_acc: Matrix,
}

pub fn exhaustive_window(scenario: &McScenario, prefix: &FrozenPrefix, h: usize) -> ExactWindow {
    let chain = scenario.process.as_markov().unwrap();
    assert_eq!(scenario.delays.max_delay(), 1);
    let nodes = chain.nodes();
    assert_eq!((nodes, chain.dim()), (2, 1));
    let p = chain.transition();
    let eye = Matrix::identity(2, 2);
    let realizations: Vec<(f64, DelayRealization)> = (0..4)
        .map(|bits| {
            let r = DelayRealization::from_rows(&[vec![0, bits & 1], vec![(bits >> 1) & 1, 0]], 1).unwrap();
            (0.25, r)
        })
        .collect();
    // Expected (Φ⁻¹ - I) terms per offset.
    let mut delayed_mean = vec![Matrix::zeros(2, 2); h];
    let mut frontier = vec![PathNode {
        prob: 1.0,
        state: prefix.state(),
        f_prev: prefix.aux.latest_f().clone(),
        lambda_acc: Matrix::zeros(2, 2),
        prime_acc: Matrix::zeros(2, 2),
    }];
    for (t, mean_t) in delayed_mean.iter_mut().enumerate() {
        let k = prefix.start + t;
        let (a, b) = scenario.gains.gains(k);
        let ratio = b / a;
        let mut next = Vec::with_capacity(frontier.len() * 8);
        for node in &frontier {
            for (s, state) in chain.states().iter().enumerate() {
                let ps = p[(node.state, s)];
                if ps == 0.0 {
                    continue;
                }
                let lhat = kron_identity(&symmetrized_laplacian(&state.graph.laplacian()), 1);
                let gram = state.observations.gram();
                let m = eye.clone() - kron_identity(&state.graph.degree_matrix(), 1) * b - &gram * a;
                for (pd, r) in &realizations {
                    let prob = node.prob * ps * pd;
                    let blocks = delayed_adjacency_blocks(&state.graph, r, 1).unwrap();
                    let f_prev_inv = node.f_prev.clone().try_inverse().unwrap();
                    let x = &blocks[1] * (&f_prev_inv - &eye);
                    *mean_t += &x * prob;
                    // back-solve: C_1 = -b Ā_1 F(k-1)⁻¹, F = M + bĀ_0 - C_1
                    let c1 = &blocks[1] * &f_prev_inv * -b;
                    let f = &m + &blocks[0] * b - c1;
                    next.push(PathNode {
                        prob,
                        state: s,
                        f_prev: f,
                        lambda_acc: &node.lambda_acc + &lhat * ratio + &gram,
                        prime_acc: &node.prime_acc + (&lhat * ratio + &gram) * 2.0 - (&x + x.transpose()) * ratio,
                    });
                }
            }
        }
        frontier = next;
    }
    let mut lambda = Matrix::zeros(2, 2);
    let mut prime = Matrix::zeros(2, 2);
    for node in &frontier {
        lambda += &node.lambda_acc * node.prob;
        prime += &node.prime_acc * node.prob;
    }
    let delta = delayed_mean
        .iter()
        .enumerate()
        .map(|(t, x)| scenario.gains.ratio(prefix.start + t) * spectral_norm(x))
        .sum();
    ExactWindow {
        lambda: min_eigenvalue(&lambda),
        lambda_prime: min_eigenvalue(&symmetric_part(&prime)),
        delta,
    }
}

/// Steps a fresh auxiliary system through recorded draws.
pub fn replay_aux(
    states: &[JointState],
    draws: &[(usize, DelayRealization)],
    gains: &GainSchedule,
    max_delay: usize,
    kappa: f64,
) -> AuxiliarySystem {
    let mut aux = AuxiliarySystem::new(states[0].nodes(), states[0].dim(), max_delay, kappa).with_trace();
    for (k, (s, r)) in draws.iter().enumerate() {
        let (a, b) = gains.gains(k);
        aux.advance(&states[*s].graph, r, &states[*s].observations, a, b).unwrap();
    }
    aux
}
