//! Numerical certificates for the convergence conditions: the excitation
//! eigenvalue `λ_m^h` (analytic for finite chains), the moment bound `ρ0`,
//! the structural Markov criteria, and Monte Carlo estimates of the delayed
//! quantities `λ_m^h'` and `Δ_m^h`.

use log::{debug, warn};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::auxiliary::{AuxiliaryError, AuxiliarySystem};
use crate::estimator::GainSchedule;
use crate::graph::{
    delayed_adjacency_blocks, symmetrized_laplacian, DelayModel, GraphError, WeightedDigraph, BALANCE_TOL,
};
use crate::linalg::{asymmetry, kron_identity, min_eigenvalue, spectral_norm, symmetric_part, Matrix};
use crate::processes::{
    check_stochastic, sample_delays, stream_rng, JointMarkovProcess, JointState, ProcessDriver, ProcessError,
    ProcessKind, StreamPurpose,
};

/// Positivity threshold for the joint observability eigenvalue.
pub const OBSERVABILITY_TOL: f64 = 1e-10;

/// Largest tolerated fraction of rejected Monte Carlo samples.
pub const MAX_REJECTION_RATE: f64 = 0.01;

/// Jackknife groups used for Monte Carlo standard errors.
pub const JACKKNIFE_GROUPS: usize = 100;

/// Smallest accepted Monte Carlo sample count.
pub const MIN_SAMPLES: usize = 100;

const SYMMETRY_TOL: f64 = 1e-8;

// Separates continuation streams from replicate streams under the same seed.
const CONTINUATION_SALT: u64 = 0x5EED_C0DE_D1CE_F00D;

#[derive(Debug, Error)]
pub enum ConditionError {
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Auxiliary(#[from] AuxiliaryError),
    #[error("unreliable estimate: {rejected} of {samples} samples hit a singular F")]
    UnreliableEstimate { rejected: usize, samples: usize },
    #[error("invalid request: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ConditionError>;

fn state_terms(state: &JointState) -> (Matrix, Matrix) {
    let n = state.dim();
    let lhat = kron_identity(&symmetrized_laplacian(&state.graph.laplacian()), n);
    (lhat, state.observations.gram())
}

/// Row `S0` of `P^1, …, P^h`.
fn conditional_rows(p: &Matrix, start: usize, h: usize) -> Vec<Vec<f64>> {
    let s = p.nrows();
    let mut row: Vec<f64> = (0..s).map(|j| f64::from(u8::from(j == start))).collect();
    let mut out = Vec::with_capacity(h);
    for _ in 0..h {
        row = (0..s).map(|j| (0..s).map(|i| row[i] * p[(i, j)]).sum()).collect();
        out.push(row.clone());
    }
    out
}

fn excitation_matrix(chain: &JointMarkovProcess, gains: &GainSchedule, h: usize, m: usize, start: usize) -> Matrix {
    let terms: Vec<(Matrix, Matrix)> = chain.states().iter().map(state_terms).collect();
    let nn = chain.nodes() * chain.dim();
    let mut acc = Matrix::zeros(nn, nn);
    for (t, row) in conditional_rows(chain.transition(), start, h).iter().enumerate() {
        let ratio = gains.ratio(m * h + t);
        for (w, (lhat, gram)) in row.iter().zip(&terms) {
            if *w != 0.0 {
                acc += lhat * (ratio * w) + gram * *w;
            }
        }
    }
    acc
}

/// `λ_m^h` for a finite joint chain conditioned on the state at time `mh-1`.
pub fn lambda_mh_markov(
    chain: &JointMarkovProcess,
    gains: &GainSchedule,
    h: usize,
    m: usize,
    conditioning_state: usize,
) -> Result<f64> {
    check_stochastic(chain.transition())?;
    if h == 0 {
        return Err(ConditionError::Invalid("window length h must be positive".into()));
    }
    if conditioning_state >= chain.states().len() {
        return Err(ConditionError::Invalid(format!(
            "conditioning state {conditioning_state} out of range"
        )));
    }
    let acc = excitation_matrix(chain, gains, h, m, conditioning_state);
    let skew = asymmetry(&acc);
    debug!("lambda_mh window m={m}: symmetrization residual {skew:.2e}");
    if skew > SYMMETRY_TOL {
        warn!("analytic accumulation asymmetric by {skew:.2e}");
    }
    Ok(min_eigenvalue(&acc))
}

/// `λ_m^h` for any process kind. Deterministic schedules condition on the
/// known schedule position; random kinds take the worst conditioning state.
pub fn lambda_mh_process(kind: &ProcessKind, gains: &GainSchedule, h: usize, m: usize) -> Result<f64> {
    let chain = kind.as_markov()?;
    match kind {
        ProcessKind::Deterministic { schedule, .. } => {
            let len = schedule.len();
            let start = ((m * h) % len + len - 1) % len;
            lambda_mh_markov(&chain, gains, h, m, start)
        }
        _ => (0..chain.states().len())
            .map(|s| lambda_mh_markov(&chain, gains, h, m, s))
            .try_fold(f64::INFINITY, |acc, v| v.map(|v| acc.min(v))),
    }
}

/// `λ_min(Σ_l π_l (L̂_l⊗I + 𝓗_lᵀ𝓗_l))`, the per-step limit of `λ_m^h / h`
/// with equal gains.
pub fn stationary_excitation(chain: &JointMarkovProcess) -> f64 {
    let nn = chain.nodes() * chain.dim();
    let mut acc = Matrix::zeros(nn, nn);
    for (pi, state) in chain.stationary().iter().zip(chain.states()) {
        let (lhat, gram) = state_terms(state);
        acc += (lhat + gram) * *pi;
    }
    min_eigenvalue(&acc)
}

/// Moment bound `ρ0` for a finite state space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentBound {
    pub rho0: f64,
    pub per_state: Vec<f64>,
}

/// `ρ0 = max_l (‖𝓛_l‖ + ‖𝓗_lᵀ𝓗_l‖)`; valid for every window length.
pub fn moment_bound(states: &[JointState]) -> MomentBound {
    let per_state: Vec<f64> = states
        .iter()
        .map(|s| spectral_norm(&s.graph.laplacian()) + spectral_norm(&s.observations.gram()))
        .collect();
    let rho0 = per_state.iter().copied().fold(0.0, f64::max);
    MomentBound { rho0, per_state }
}

/// Structural Markov-switching criteria.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchingCriteria {
    pub stationary_nonneg: bool,
    pub balanced: bool,
    pub spanning_tree: bool,
    pub joint_obs_lambda: f64,
    pub verdict: bool,
}

/// Checks the stationary-mean graph and the joint observability eigenvalue.
pub fn switching_criteria_check(chain: &JointMarkovProcess) -> Result<SwitchingCriteria> {
    let pi = chain.stationary();
    let nodes = chain.nodes();
    let mean = WeightedDigraph::weighted_mean(pi.iter().copied().zip(chain.states().iter().map(|s| &s.graph)), nodes)?;
    let stationary_nonneg = mean.is_nonnegative();
    let balanced = mean.is_balanced(BALANCE_TOL);
    let spanning_tree = stationary_nonneg && mean.has_spanning_tree()?;
    let n = chain.dim();
    let mut joint = Matrix::zeros(n, n);
    for (w, s) in pi.iter().zip(chain.states()) {
        joint += s.observations.summed_gram() * *w;
    }
    let joint_obs_lambda = min_eigenvalue(&joint);
    Ok(SwitchingCriteria {
        stationary_nonneg,
        balanced,
        spanning_tree,
        joint_obs_lambda,
        verdict: stationary_nonneg && balanced && spanning_tree && joint_obs_lambda > OBSERVABILITY_TOL,
    })
}

/// `(‖mean AAᵀ‖, n‖mean AᵀA‖)` over an ensemble of `m×n` matrices.
pub fn gram_norm_sides(ensemble: &[Matrix]) -> (f64, f64) {
    let Some(first) = ensemble.first() else {
        return (0.0, 0.0);
    };
    let (m, n) = first.shape();
    let mut outer = Matrix::zeros(m, m);
    let mut inner = Matrix::zeros(n, n);
    for a in ensemble {
        outer += a * a.transpose();
        inner += a.transpose() * a;
    }
    let s = ensemble.len() as f64;
    (spectral_norm(&(outer / s)), n as f64 * spectral_norm(&(inner / s)))
}

/// Everything needed to sample window continuations of a switching, delayed
/// network.
#[derive(Debug, Clone)]
pub struct McScenario {
    pub process: ProcessKind,
    pub delays: DelayModel,
    pub gains: GainSchedule,
    /// κ handed to the auxiliary system.
    pub kappa: f64,
    /// Process state at time `-1`.
    pub initial_state: usize,
    pub seed: u64,
}

impl McScenario {
    fn nodes(&self) -> usize {
        self.process.nodes()
    }

    fn dim(&self) -> usize {
        self.process.dim()
    }
}

/// Realized history up to time `start - 1`.
#[derive(Debug, Clone)]
pub struct FrozenPrefix {
    pub start: usize,
    pub aux: AuxiliarySystem,
    pub driver: ProcessDriver,
    delay_rng: ChaCha8Rng,
}

impl FrozenPrefix {
    /// Process state at time `start - 1`.
    pub fn state(&self) -> usize {
        self.driver.current()
    }

    /// Continues the same realized path up to time `start - 1`.
    pub fn advance_to(&mut self, scenario: &McScenario, start: usize) -> Result<()> {
        if start < self.start {
            return Err(ConditionError::Invalid(format!(
                "prefix already frozen at {}, cannot rewind to {start}",
                self.start
            )));
        }
        for k in self.start..start {
            let idx = self.driver.next_index(k);
            let delays = sample_delays(&scenario.delays, k, &mut self.delay_rng)?;
            let state = self.driver.state(idx);
            let (a, b) = scenario.gains.gains(k);
            self.aux.advance(&state.graph, &delays, &state.observations, a, b)?;
        }
        self.start = start;
        Ok(())
    }
}

/// Replays replicate `replicate` of the scenario through time `start - 1`.
pub fn freeze_prefix(scenario: &McScenario, start: usize, replicate: u64) -> Result<FrozenPrefix> {
    let driver = ProcessDriver::new(
        scenario.process.clone(),
        scenario.initial_state,
        stream_rng(scenario.seed, replicate, StreamPurpose::Graph),
    )?;
    let aux = AuxiliarySystem::new(
        scenario.nodes(),
        scenario.dim(),
        scenario.delays.max_delay(),
        scenario.kappa,
    );
    let mut prefix = FrozenPrefix {
        start: 0,
        aux,
        driver,
        delay_rng: stream_rng(scenario.seed, replicate, StreamPurpose::Delay),
    };
    prefix.advance_to(scenario, start)?;
    Ok(prefix)
}

/// Monte Carlo estimate with a grouped-jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// Window statistics estimated from one set of sampled continuations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowEstimates {
    /// Conditional-sampling estimate of `λ_m^h`.
    pub lambda: McEstimate,
    pub lambda_prime: McEstimate,
    pub delta: McEstimate,
    pub samples: usize,
    pub rejected: usize,
}

// Sums over the accepted samples of one jackknife group.
#[derive(Clone)]
struct GroupSums {
    count: usize,
    rejected: usize,
    plain: Matrix,
    primed: Matrix,
    // (Φ⁻¹ - I) terms, indexed t * (d+1) + q
    delayed: Vec<Matrix>,
}

impl GroupSums {
    fn zeros(nn: usize, slots: usize) -> Self {
        Self {
            count: 0,
            rejected: 0,
            plain: Matrix::zeros(nn, nn),
            primed: Matrix::zeros(nn, nn),
            delayed: vec![Matrix::zeros(nn, nn); slots],
        }
    }

    fn add(&mut self, other: &Self) {
        self.count += other.count;
        self.rejected += other.rejected;
        self.plain += &other.plain;
        self.primed += &other.primed;
        for (a, b) in self.delayed.iter_mut().zip(&other.delayed) {
            *a += b;
        }
    }

    fn sub(&self, other: &Self) -> Self {
        Self {
            count: self.count - other.count,
            rejected: self.rejected - other.rejected,
            plain: &self.plain - &other.plain,
            primed: &self.primed - &other.primed,
            delayed: self.delayed.iter().zip(&other.delayed).map(|(a, b)| a - b).collect(),
        }
    }
}

struct SampleTerms {
    plain: Matrix,
    primed: Matrix,
    delayed: Vec<Matrix>,
}

fn sample_window(
    scenario: &McScenario,
    prefix: &FrozenPrefix,
    h: usize,
    stream_seed: u64,
    sample: u64,
) -> Result<Option<SampleTerms>> {
    let n = scenario.dim();
    let nn = scenario.nodes() * n;
    let d = scenario.delays.max_delay();
    let eye = Matrix::identity(nn, nn);
    let mut aux = prefix.aux.clone();
    let mut driver = prefix
        .driver
        .fork(prefix.state(), stream_rng(stream_seed, sample, StreamPurpose::Graph));
    let mut delay_rng = stream_rng(stream_seed, sample, StreamPurpose::Delay);
    let mut plain = Matrix::zeros(nn, nn);
    let mut primed = Matrix::zeros(nn, nn);
    let mut delayed = Vec::with_capacity(h * (d + 1));
    for t in 0..h {
        let k = prefix.start + t;
        let idx = driver.next_index(k);
        let state = driver.state(idx);
        let delays = sample_delays(&scenario.delays, k, &mut delay_rng)?;
        let (lhat, gram) = state_terms(state);
        let ratio = scenario.gains.ratio(k);
        plain += &lhat * ratio + &gram;
        primed += (lhat * ratio + gram) * 2.0;
        let chain = aux.phi_inverse_chain();
        let blocks = delayed_adjacency_blocks(&state.graph, &delays, n)?;
        for q in 0..=d {
            let x = if q == 0 || blocks[q].amax() == 0.0 {
                Matrix::zeros(nn, nn)
            } else {
                &blocks[q] * (&chain[q] - &eye)
            };
            primed -= (&x + x.transpose()) * ratio;
            delayed.push(x);
        }
        if t + 1 < h {
            let (a, b) = scenario.gains.gains(k);
            match aux.advance(&state.graph, &delays, &state.observations, a, b) {
                Ok(_) => {}
                Err(AuxiliaryError::Singular { .. }) => return Ok(None),
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(Some(SampleTerms { plain, primed, delayed }))
}

fn window_values(sums: &GroupSums, scenario: &McScenario, start: usize, h: usize, d: usize) -> (f64, f64, f64) {
    let c = sums.count as f64;
    let lambda = min_eigenvalue(&(&sums.plain / c));
    let lambda_prime = min_eigenvalue(&symmetric_part(&(&sums.primed / c)));
    let mut delta = 0.0;
    for t in 0..h {
        let ratio = scenario.gains.ratio(start + t);
        for q in 1..=d {
            delta += ratio * spectral_norm(&(&sums.delayed[t * (d + 1) + q] / c));
        }
    }
    (lambda, lambda_prime, delta)
}

/// Estimates `λ_m^h`, `λ_m^h'` and `Δ_m^h` for the window starting at
/// `prefix.start` from `samples` continuations.
pub fn window_estimates(
    scenario: &McScenario,
    prefix: &FrozenPrefix,
    h: usize,
    samples: usize,
) -> Result<WindowEstimates> {
    if samples < MIN_SAMPLES {
        return Err(ConditionError::Invalid(format!(
            "at least {MIN_SAMPLES} samples are required, got {samples}"
        )));
    }
    if h == 0 {
        return Err(ConditionError::Invalid("window length h must be positive".into()));
    }
    let nn = scenario.nodes() * scenario.dim();
    let d = scenario.delays.max_delay();
    let slots = h * (d + 1);
    let stream_seed = scenario.seed ^ CONTINUATION_SALT ^ (prefix.start as u64).rotate_left(32);
    let groups = JACKKNIFE_GROUPS.min(samples);

    let per_group: Vec<GroupSums> = (0..groups)
        .into_par_iter()
        .map(|g| -> Result<GroupSums> {
            let mut acc = GroupSums::zeros(nn, slots);
            for s in (g..samples).step_by(groups) {
                match sample_window(scenario, prefix, h, stream_seed, s as u64)? {
                    Some(terms) => {
                        acc.count += 1;
                        acc.plain += terms.plain;
                        acc.primed += terms.primed;
                        for (a, x) in acc.delayed.iter_mut().zip(terms.delayed) {
                            *a += x;
                        }
                    }
                    None => acc.rejected += 1,
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    let mut total = GroupSums::zeros(nn, slots);
    for g in &per_group {
        total.add(g);
    }
    if total.rejected as f64 > MAX_REJECTION_RATE * samples as f64 || total.count == 0 {
        return Err(ConditionError::UnreliableEstimate {
            rejected: total.rejected,
            samples,
        });
    }
    let full = window_values(&total, scenario, prefix.start, h, d);

    let leave_out: Vec<(f64, f64, f64)> = per_group
        .iter()
        .filter(|g| g.count > 0 && g.count < total.count)
        .map(|g| window_values(&total.sub(g), scenario, prefix.start, h, d))
        .collect();
    let jk = leave_out.len() as f64;
    let stderr = |pick: fn(&(f64, f64, f64)) -> f64| {
        if leave_out.len() < 2 {
            return f64::NAN;
        }
        let mean = leave_out.iter().map(pick).sum::<f64>() / jk;
        let ss: f64 = leave_out.iter().map(|v| (pick(v) - mean).powi(2)).sum();
        ((jk - 1.0) / jk * ss).sqrt()
    };
    Ok(WindowEstimates {
        lambda: McEstimate {
            value: full.0,
            stderr: stderr(|v| v.0),
        },
        lambda_prime: McEstimate {
            value: full.1,
            stderr: stderr(|v| v.1),
        },
        delta: McEstimate {
            value: full.2,
            stderr: stderr(|v| v.2),
        },
        samples,
        rejected: total.rejected,
    })
}

/// Monte Carlo `λ_m^h'` conditioned on the frozen prefix.
pub fn lambda_mh_prime_mc(
    scenario: &McScenario,
    prefix: &FrozenPrefix,
    h: usize,
    samples: usize,
) -> Result<McEstimate> {
    window_estimates(scenario, prefix, h, samples).map(|w| w.lambda_prime)
}

/// Monte Carlo `Δ_m^h` conditioned on the frozen prefix.
pub fn delta_mh_mc(scenario: &McScenario, prefix: &FrozenPrefix, h: usize, samples: usize) -> Result<McEstimate> {
    window_estimates(scenario, prefix, h, samples).map(|w| w.delta)
}

/// Which window quantity a scan evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanQuantity {
    /// `λ_m^h`, exact for finite chains.
    Lambda,
    /// `λ_m^h'` by Monte Carlo.
    LambdaPrime,
    /// `λ_m^h - Δ_m^h`, analytic minus Monte Carlo.
    LambdaMinusDelta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScanMethod {
    AnalyticMarkov,
    MonteCarlo { samples: usize },
}

/// Profile of a window quantity over `m = 0..=m_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub quantity: ScanQuantity,
    pub h: usize,
    pub m_range: (usize, usize),
    pub values: Vec<f64>,
    pub stderrs: Option<Vec<f64>>,
    pub theta: f64,
    pub theta_hat: f64,
    pub method: ScanMethod,
    pub verdict: bool,
}

/// Evaluates `quantity` for each `m ≤ m_max`. The verdict requires every
/// value to exceed `theta`, plus three standard errors for sampled values.
pub fn infimum_scan(
    scenario: &McScenario,
    quantity: ScanQuantity,
    h: usize,
    m_max: usize,
    samples: usize,
    theta: f64,
) -> Result<ConditionReport> {
    if m_max < 1 {
        return Err(ConditionError::Invalid("m_max must be at least 1".into()));
    }
    let mut values = Vec::with_capacity(m_max + 1);
    let mut stderrs = Vec::with_capacity(m_max + 1);
    let method = match quantity {
        ScanQuantity::Lambda => ScanMethod::AnalyticMarkov,
        _ => ScanMethod::MonteCarlo { samples },
    };
    let chain = scenario.process.as_markov()?;
    let mut prefix = (quantity != ScanQuantity::Lambda).then(|| freeze_prefix(scenario, 0, 0)).transpose()?;
    for m in 0..=m_max {
        match quantity {
            ScanQuantity::Lambda => {
                values.push(lambda_mh_process(&scenario.process, &scenario.gains, h, m)?);
            }
            ScanQuantity::LambdaPrime | ScanQuantity::LambdaMinusDelta => {
                let p = prefix.as_mut().expect("prefix built for sampled scans");
                p.advance_to(scenario, m * h)?;
                let w = window_estimates(scenario, p, h, samples)?;
                if quantity == ScanQuantity::LambdaPrime {
                    values.push(w.lambda_prime.value);
                    stderrs.push(w.lambda_prime.stderr);
                } else {
                    let start = match &scenario.process {
                        ProcessKind::Deterministic { schedule, .. } => {
                            let len = schedule.len();
                            ((m * h) % len + len - 1) % len
                        }
                        ProcessKind::Markov(_) => p.state(),
                        ProcessKind::Iid { .. } => 0,
                    };
                    let lambda = lambda_mh_markov(&chain, &scenario.gains, h, m, start)?;
                    values.push(lambda - w.delta.value);
                    stderrs.push(w.delta.stderr);
                }
            }
        }
    }
    let theta_hat = values.iter().copied().fold(f64::INFINITY, f64::min);
    let verdict = if stderrs.is_empty() {
        values.iter().all(|&v| v > theta)
    } else {
        values.iter().zip(&stderrs).all(|(&v, &se)| v > theta + 3.0 * se)
    };
    Ok(ConditionReport {
        quantity,
        h,
        m_range: (0, m_max),
        values,
        stderrs: (!stderrs.is_empty()).then_some(stderrs),
        theta,
        theta_hat,
        method,
        verdict,
    })
}
