mod common;

use dcoe::auxiliary::{g_residual, phi_product, AuxiliarySystem};
use dcoe::estimator::{network_step, NetworkState, StepInput, StepMode};
use dcoe::graph::DelayModel;
use dcoe::linalg::{Matrix, Vector};
use dcoe::processes::{sample_delays, JointState};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use common::*;

fn random_states(r: &mut impl Rng, nodes: usize, dim: usize) -> Vec<JointState> {
    let rows = random_rows(r, nodes, dim, 2);
    (0..2)
        .map(|_| JointState::new(random_observations(r, dim, &rows), random_graph(r, nodes, 0.8)).unwrap())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phi_products_associate(seed in any::<u64>(), len in 1usize..8, dim in 1usize..4, first in -4i64..4) {
        let mut r = rng(seed);
        let seq: Vec<Matrix> = (0..len).map(|_| Matrix::from_fn(dim, dim, |_, _| r.random_range(-1.0..=1.0))).collect();
        let last = first + len as i64 - 1;
        let i = r.random_range(first..=last);
        let j = r.random_range(i..=last);
        let l = r.random_range(i..=j);
        let whole = phi_product(&seq, first, j, i).unwrap();
        let split = phi_product(&seq, first, j, l + 1).unwrap() * phi_product(&seq, first, l, i).unwrap();
        prop_assert!((whole - split).amax() <= 1e-12);
        prop_assert_eq!(phi_product(&seq, first, i - 1, i).unwrap(), Matrix::identity(dim, dim));
    }

    #[test]
    fn defining_relations_hold_along_random_paths(seed in any::<u64>(), nodes in 2usize..4, dim in 1usize..4, d in 0usize..4) {
        let mut r = rng(seed);
        let states = random_states(&mut r, nodes, dim);
        let (gains, _, kappa) = bounded_gains(&states, d, 0.9);
        let delays = DelayModel::uniform(nodes, d);
        let mut aux = AuxiliarySystem::new(nodes, dim, d, kappa);
        for k in 0..100 {
            let st = &states[r.random_range(0..2)];
            let real = sample_delays(&delays, k, &mut r).unwrap();
            let (a, b) = gains.gains(k);
            let report = aux.advance(&st.graph, &real, &st.observations, a, b).unwrap();
            prop_assert!(report.relation_residual <= 1e-10);
            prop_assert!(aux.certify_inverse().holds());
        }
        prop_assert_eq!(aux.step(), 100);
        prop_assert_eq!(aux.c().len(), d);
    }
}

#[test]
fn inverse_bound_holds_on_many_instances() {
    let mut r = rng(41);
    for _ in 0..120 {
        let nodes = r.random_range(2..=4);
        let dim = r.random_range(1..=3);
        let d = r.random_range(0..=3);
        let states = random_states(&mut r, nodes, dim);
        let fraction = r.random_range(0.5..0.99);
        let (gains, _, kappa) = bounded_gains(&states, d, fraction);
        let delays = DelayModel::uniform(nodes, d);
        let mut aux = AuxiliarySystem::new(nodes, dim, d, kappa);
        for k in 0..200 {
            let st = &states[r.random_range(0..2)];
            let real = sample_delays(&delays, k, &mut r).unwrap();
            let (a, b) = gains.gains(k);
            aux.advance(&st.graph, &real, &st.observations, a, b).unwrap();
            let cert = aux.certify_inverse();
            assert!(cert.holds(), "‖F⁻¹‖ = {} > {} at k = {k}", cert.inv_norm, cert.bound);
        }
    }
}

#[test]
fn equivalent_recursion_reproduces_two_node_errors() {
    let (nodes, dim, d) = (2, 1, 2);
    let mut r = rng(42);
    let states = random_states(&mut r, nodes, dim);
    let (gains, _, kappa) = bounded_gains(&states, d, 0.95);
    let delays = DelayModel::uniform(nodes, d);
    let x0 = Vector::from_element(1, 0.7);
    let target = Vector::from_element(2, 0.7);
    let init = Vector::from_vec(vec![-3.0, 5.0]);
    let mut x = NetworkState::new(nodes, dim, init.clone(), d).unwrap();
    let mut errors = vec![&init - &target];
    let mut forcing = Vec::new();
    let mut draws = Vec::new();
    let horizon = 200;
    for k in 0..horizon {
        let s = r.random_range(0..2);
        let st = &states[s];
        let real = sample_delays(&delays, k, &mut r).unwrap();
        let v = Vector::from_fn(st.observations.total_rows(), |_, _| StandardNormal.sample(&mut r));
        let z = st.observations.stacked() * &x0 + &v;
        let (a, b) = gains.gains(k);
        let input = StepInput { observations: &st.observations, graph: &st.graph, delays: &real, innovation_gain: a, consensus_gain: b };
        network_step(&mut x, &input, &z, StepMode::Compact).unwrap();
        errors.push(x.current() - &target);
        forcing.push(st.observations.block_diagonal().transpose() * &v * a);
        draws.push((s, real));
    }
    let aux = replay_aux(&states, &draws, &gains, d, kappa);
    let trace = aux.trace().unwrap();
    assert_eq!(trace.f.len(), horizon);
    for k in d..horizon {
        let res = g_residual(&errors, &forcing, trace, k).unwrap();
        assert!(res <= 1e-9, "residual {res:e} at k = {k}");
    }
}
