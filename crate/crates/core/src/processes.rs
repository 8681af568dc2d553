//! Random processes driving the network: the joint observation/graph
//! process, link delays and measurement noise, plus Markov-chain analytics.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal, Uniform};
use thiserror::Error;

use crate::graph::{DelayModel, DelayRealization, GraphError, WeightedDigraph};
use crate::linalg::{block_diagonal, Matrix, Vector};

/// Row sums of a transition matrix must match 1 within this.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Singular values below this count towards the left null space of `P - I`.
const NULLITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProcessError {
    #[error("transition matrix is not row-stochastic: {0}")]
    NotStochastic(String),
    #[error("stationary distribution is not unique (eigenvalue-1 left eigenspace has dimension {0})")]
    NonUniqueStationary(usize),
    #[error("state {index}: {reason}")]
    InconsistentState { index: usize, reason: String },
    #[error("invalid process description: {0}")]
    Invalid(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T> = std::result::Result<T, ProcessError>;

/// Per-node observation matrices `H_i` (each `n_i × n`).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    dim: usize,
    blocks: Vec<Matrix>,
}

impl ObservationSet {
    pub fn new(dim: usize, blocks: Vec<Matrix>) -> Result<Self> {
        for (i, b) in blocks.iter().enumerate() {
            if b.ncols() != dim {
                return Err(ProcessError::Invalid(format!(
                    "H_{i} has {} columns, parameter dimension is {dim}",
                    b.ncols()
                )));
            }
            if b.nrows() > dim {
                return Err(ProcessError::Invalid(format!(
                    "H_{i} has {} rows, more than the parameter dimension {dim}",
                    b.nrows()
                )));
            }
        }
        Ok(Self { dim, blocks })
    }

    pub fn nodes(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block(&self, i: usize) -> &Matrix {
        &self.blocks[i]
    }

    pub fn blocks(&self) -> &[Matrix] {
        &self.blocks
    }

    pub fn node_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.nrows()).collect()
    }

    /// Row offset of node `i`'s measurements in the stacked vector.
    pub fn offset(&self, i: usize) -> usize {
        self.blocks[..i].iter().map(|b| b.nrows()).sum()
    }

    pub fn total_rows(&self) -> usize {
        self.blocks.iter().map(|b| b.nrows()).sum()
    }

    /// Stacked `H = [H_1; …; H_N]`.
    pub fn stacked(&self) -> Matrix {
        let mut out = Matrix::zeros(self.total_rows(), self.dim);
        let mut r = 0;
        for b in &self.blocks {
            out.view_mut((r, 0), b.shape()).copy_from(b);
            r += b.nrows();
        }
        out
    }

    /// `𝓗 = diag(H_1, …, H_N)`.
    pub fn block_diagonal(&self) -> Matrix {
        block_diagonal(&self.blocks)
    }

    /// `𝓗ᵀ𝓗 = diag(H_1ᵀH_1, …)`.
    pub fn gram(&self) -> Matrix {
        let grams: Vec<Matrix> = self.blocks.iter().map(|b| b.transpose() * b).collect();
        block_diagonal(&grams)
    }

    /// `Σ_i H_iᵀH_i` (n × n).
    pub fn summed_gram(&self) -> Matrix {
        self.blocks
            .iter()
            .fold(Matrix::zeros(self.dim, self.dim), |acc, b| acc + b.transpose() * b)
    }

    pub fn max_block_norm(&self) -> f64 {
        self.blocks
            .iter()
            .map(crate::linalg::spectral_norm)
            .fold(0.0, f64::max)
    }
}

/// One state `⟨𝓗_l, 𝓐_l⟩` of the joint process.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub observations: ObservationSet,
    pub graph: WeightedDigraph,
}

impl JointState {
    pub fn new(observations: ObservationSet, graph: WeightedDigraph) -> Result<Self> {
        if observations.nodes() != graph.node_count() {
            return Err(ProcessError::Invalid(format!(
                "{} observation blocks for a graph on {} nodes",
                observations.nodes(),
                graph.node_count()
            )));
        }
        Ok(Self {
            observations,
            graph,
        })
    }

    pub fn nodes(&self) -> usize {
        self.graph.node_count()
    }

    pub fn dim(&self) -> usize {
        self.observations.dim()
    }
}

fn check_consistent(states: &[JointState]) -> Result<()> {
    let first = states
        .first()
        .ok_or_else(|| ProcessError::Invalid("state space is empty".into()))?;
    let dims = first.observations.node_dims();
    for (index, s) in states.iter().enumerate() {
        if s.nodes() != first.nodes() || s.dim() != first.dim() {
            return Err(ProcessError::InconsistentState {
                index,
                reason: "node count or parameter dimension differs from state 0".into(),
            });
        }
        if s.observations.node_dims() != dims {
            return Err(ProcessError::InconsistentState {
                index,
                reason: "observation block shapes differ from state 0".into(),
            });
        }
    }
    Ok(())
}

pub fn check_stochastic(p: &Matrix) -> Result<()> {
    if p.nrows() != p.ncols() || p.nrows() == 0 {
        return Err(ProcessError::NotStochastic(format!(
            "shape {}x{}",
            p.nrows(),
            p.ncols()
        )));
    }
    for (i, row) in p.row_iter().enumerate() {
        if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(ProcessError::NotStochastic(format!("row {i} has a negative entry")));
        }
        let s = row.sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(ProcessError::NotStochastic(format!("row {i} sums to {s}")));
        }
    }
    Ok(())
}

/// Normalized left null vector of `P - I`.
pub fn stationary_distribution(p: &Matrix) -> Result<Vector> {
    check_stochastic(p)?;
    let n = p.nrows();
    let m = p.transpose() - Matrix::identity(n, n);
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let null: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= NULLITY_TOL)
        .map(|(i, _)| i)
        .collect();
    if null.len() != 1 {
        return Err(ProcessError::NonUniqueStationary(null.len()));
    }
    let mut pi: Vector = v_t.row(null[0]).transpose();
    let total = pi.sum();
    pi /= total;
    for v in pi.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let total = pi.sum();
    Ok(pi / total)
}

/// Geometric envelope `D_n <= R r^{-n}` of the total-variation distances.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicityFit {
    pub envelope: f64,
    pub rate: f64,
    /// `D_n`, n = 1..=horizon.
    pub distances: Vec<f64>,
    /// Last n covered by the envelope (distances below round-off are excluded).
    pub fitted_through: usize,
}

/// Distances at or below this are treated as exact mixing.
const TV_FLOOR: f64 = 1e-12;
const FIT_FLOOR: f64 = 1e-8;

/// Fits `R, r` from `D_n = max_x Σ_y |Pⁿ(x,y) - π_y|`. Returns `None` when
/// `D_n` does not fall below `1e-6` within the horizon.
pub fn ergodicity_diagnostic(p: &Matrix, horizon: usize) -> Result<Option<ErgodicityFit>> {
    let pi = stationary_distribution(p)?;
    let n = p.nrows();
    let mut power = p.clone();
    let mut distances = Vec::with_capacity(horizon);
    for step in 1..=horizon {
        if step > 1 {
            power = &power * p;
        }
        let d = (0..n)
            .map(|x| (0..n).map(|y| (power[(x, y)] - pi[y]).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        distances.push(d);
    }
    if !distances.iter().any(|&d| d < 1e-6) {
        return Ok(None);
    }
    if distances[0] <= TV_FLOOR {
        return Ok(Some(ErgodicityFit {
            envelope: 0.0,
            rate: f64::INFINITY,
            distances,
            fitted_through: 1,
        }));
    }
    let last = distances
        .iter()
        .position(|&d| d <= TV_FLOOR)
        .unwrap_or(horizon);
    // Asymptotic rate from the tail half of the range resolved well above
    // rounding noise.
    let resolved = distances[..last].iter().take_while(|&&d| d > FIT_FLOOR).count();
    let (a, b) = if resolved >= 2 {
        ((resolved / 2).max(1), resolved)
    } else if last >= 2 {
        ((last / 2).max(1), last)
    } else {
        (1, 1)
    };
    let rate = if b > a {
        (distances[a - 1] / distances[b - 1]).powf(1.0 / (b - a) as f64)
    } else {
        1.0 / distances[0]
    }
    .max(1.0 + 1e-12);
    let envelope = distances[..last]
        .iter()
        .enumerate()
        .map(|(i, d)| d * rate.powi(i as i32 + 1))
        .fold(0.0, f64::max);
    Ok(Some(ErgodicityFit {
        envelope,
        rate,
        distances,
        fitted_through: last,
    }))
}

/// Homogeneous Markov chain over a finite joint state space.
#[derive(Debug, Clone)]
pub struct JointMarkovProcess {
    states: Vec<JointState>,
    transition: Matrix,
    stationary: Vector,
}

impl JointMarkovProcess {
    pub fn new(states: Vec<JointState>, transition: Matrix) -> Result<Self> {
        check_consistent(&states)?;
        if transition.nrows() != states.len() {
            return Err(ProcessError::NotStochastic(format!(
                "{} states but a {}x{} transition matrix",
                states.len(),
                transition.nrows(),
                transition.ncols()
            )));
        }
        let stationary = stationary_distribution(&transition)?;
        Ok(Self {
            states,
            transition,
            stationary,
        })
    }

    /// A fixed state seen as a one-state chain.
    pub fn single(state: JointState) -> Self {
        Self {
            states: vec![state],
            transition: Matrix::identity(1, 1),
            stationary: Vector::from_element(1, 1.0),
        }
    }

    /// I.i.d. draws as a chain whose rows all equal `weights`.
    pub fn iid(states: Vec<JointState>, weights: &[f64]) -> Result<Self> {
        let w = normalized_weights(weights, states.len())?;
        let n = states.len();
        let p = Matrix::from_fn(n, n, |_, j| w[j]);
        Self::new(states, p)
    }

    pub fn states(&self) -> &[JointState] {
        &self.states
    }

    pub fn transition(&self) -> &Matrix {
        &self.transition
    }

    pub fn stationary(&self) -> &Vector {
        &self.stationary
    }

    pub fn nodes(&self) -> usize {
        self.states[0].nodes()
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }
}

fn normalized_weights(weights: &[f64], len: usize) -> Result<Vec<f64>> {
    if weights.len() != len {
        return Err(ProcessError::Invalid(format!(
            "{} weights for {len} states",
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(ProcessError::Invalid("weights must be nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(ProcessError::Invalid("weights sum to zero".into()));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// How the joint state evolves in time.
#[derive(Debug, Clone)]
pub enum ProcessKind {
    Markov(Arc<JointMarkovProcess>),
    Iid {
        states: Arc<Vec<JointState>>,
        weights: Vec<f64>,
    },
    /// `schedule[k % len]` indexes `states`.
    Deterministic {
        states: Arc<Vec<JointState>>,
        schedule: Vec<usize>,
    },
}

impl ProcessKind {
    pub fn iid(states: Vec<JointState>, weights: &[f64]) -> Result<Self> {
        check_consistent(&states)?;
        let weights = normalized_weights(weights, states.len())?;
        Ok(Self::Iid {
            states: Arc::new(states),
            weights,
        })
    }

    pub fn deterministic(states: Vec<JointState>, schedule: Vec<usize>) -> Result<Self> {
        check_consistent(&states)?;
        if schedule.is_empty() {
            return Err(ProcessError::Invalid("deterministic schedule is empty".into()));
        }
        if let Some(&bad) = schedule.iter().find(|&&s| s >= states.len()) {
            return Err(ProcessError::Invalid(format!("schedule index {bad} out of range")));
        }
        Ok(Self::Deterministic {
            states: Arc::new(states),
            schedule,
        })
    }

    pub fn fixed(state: JointState) -> Self {
        Self::Deterministic {
            states: Arc::new(vec![state]),
            schedule: vec![0],
        }
    }

    pub fn states(&self) -> &[JointState] {
        match self {
            Self::Markov(chain) => chain.states(),
            Self::Iid { states, .. } | Self::Deterministic { states, .. } => states,
        }
    }

    pub fn nodes(&self) -> usize {
        self.states()[0].nodes()
    }

    pub fn dim(&self) -> usize {
        self.states()[0].dim()
    }

    /// Equivalent Markov description for the analytic condition checkers.
    ///
    /// Deterministic schedules become a cyclic chain over schedule positions;
    /// state `p` of the returned chain is `states[schedule[p]]`.
    pub fn as_markov(&self) -> Result<JointMarkovProcess> {
        match self {
            Self::Markov(chain) => Ok((**chain).clone()),
            Self::Iid { states, weights } => JointMarkovProcess::iid((**states).clone(), weights),
            Self::Deterministic { states, schedule } => {
                let len = schedule.len();
                let chain_states = schedule.iter().map(|&s| states[s].clone()).collect();
                if len == 1 {
                    let single: Vec<JointState> = chain_states;
                    return Ok(JointMarkovProcess::single(single.into_iter().next().unwrap()));
                }
                let p = Matrix::from_fn(len, len, |i, j| f64::from(u8::from(j == (i + 1) % len)));
                JointMarkovProcess::new(chain_states, p)
            }
        }
    }
}

/// Seeded sampler of the joint state sequence.
#[derive(Debug, Clone)]
pub struct ProcessDriver {
    kind: ProcessKind,
    current: usize,
    rng: ChaCha8Rng,
}

impl ProcessDriver {
    /// `initial` is the Markov state at time `-1`; other kinds ignore it.
    pub fn new(kind: ProcessKind, initial: usize, rng: ChaCha8Rng) -> Result<Self> {
        if initial >= kind.states().len() {
            return Err(ProcessError::Invalid(format!(
                "initial state {initial} out of range"
            )));
        }
        Ok(Self {
            kind,
            current: initial,
            rng,
        })
    }

    pub fn kind(&self) -> &ProcessKind {
        &self.kind
    }

    /// Index of the most recently emitted state (or the initial state).
    pub fn current(&self) -> usize {
        self.current
    }

    /// Same process restarted from `current` with a fresh stream.
    pub fn fork(&self, current: usize, rng: ChaCha8Rng) -> Self {
        Self {
            kind: self.kind.clone(),
            current,
            rng,
        }
    }

    /// State index for time `k`.
    pub fn next_index(&mut self, k: usize) -> usize {
        self.current = match &self.kind {
            ProcessKind::Markov(chain) => {
                let row = chain.transition().row(self.current);
                sample_row(row.iter().copied(), &mut self.rng)
            }
            ProcessKind::Iid { weights, .. } => sample_row(weights.iter().copied(), &mut self.rng),
            ProcessKind::Deterministic { schedule, .. } => schedule[k % schedule.len()],
        };
        self.current
    }

    /// `⟨𝓗(k), 𝓐_G(k)⟩`.
    pub fn next_state(&mut self, k: usize) -> &JointState {
        let idx = self.next_index(k);
        &self.kind.states()[idx]
    }

    pub fn state(&self, index: usize) -> &JointState {
        &self.kind.states()[index]
    }
}

fn sample_row(weights: impl Iterator<Item = f64>, rng: &mut impl Rng) -> usize {
    let w: Vec<f64> = weights.collect();
    if let Some(pos) = w.iter().position(|&x| x == 1.0) {
        return pos;
    }
    WeightedIndex::new(&w)
        .expect("validated probability row")
        .sample(rng)
}

/// Draws `λ_ji(k)` for every link.
pub fn sample_delays(
    model: &DelayModel,
    k: usize,
    rng: &mut dyn RngCore,
) -> std::result::Result<DelayRealization, GraphError> {
    if let Some(coupling) = model.coupling() {
        return Ok(coupling(model, k, rng));
    }
    let n = model.nodes();
    let d = model.max_delay();
    if d == 0 {
        return Ok(DelayRealization::zero(n, 0));
    }
    let mut lags = vec![0; n * n];
    for from in 0..n {
        for to in 0..n {
            if from == to {
                continue;
            }
            let p = model.probabilities(k, from, to)?;
            lags[from * n + to] = match p.iter().position(|&x| x == 1.0) {
                Some(q) => q,
                None => WeightedIndex::new(&p)
                    .expect("validated delay distribution")
                    .sample(rng),
            };
        }
    }
    DelayRealization::new(n, d, lags)
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    Gaussian { sigma: Vec<f64> },
    Uniform { half_width: Vec<f64> },
    Zero,
}

/// Independent zero-mean measurement noise, one scale per node.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    node_dims: Vec<usize>,
    kind: NoiseKind,
}

impl NoiseModel {
    pub fn new(node_dims: Vec<usize>, kind: NoiseKind) -> Result<Self> {
        let scales = match &kind {
            NoiseKind::Gaussian { sigma } => Some(sigma),
            NoiseKind::Uniform { half_width } => Some(half_width),
            NoiseKind::Zero => None,
        };
        if let Some(s) = scales {
            if s.len() != node_dims.len() {
                return Err(ProcessError::Invalid(format!(
                    "{} noise scales for {} nodes",
                    s.len(),
                    node_dims.len()
                )));
            }
            if s.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(ProcessError::Invalid("noise scales must be finite and nonnegative".into()));
            }
        }
        Ok(Self { node_dims, kind })
    }

    pub fn zero(node_dims: Vec<usize>) -> Self {
        Self {
            node_dims,
            kind: NoiseKind::Zero,
        }
    }

    pub fn kind(&self) -> &NoiseKind {
        &self.kind
    }

    pub fn total_dim(&self) -> usize {
        self.node_dims.iter().sum()
    }

    /// `β_v = E‖v(k)‖²`.
    pub fn beta_v(&self) -> f64 {
        let per_coord: Vec<f64> = match &self.kind {
            NoiseKind::Gaussian { sigma } => sigma.iter().map(|s| s * s).collect(),
            NoiseKind::Uniform { half_width } => half_width.iter().map(|w| w * w / 3.0).collect(),
            NoiseKind::Zero => return 0.0,
        };
        per_coord
            .iter()
            .zip(&self.node_dims)
            .map(|(v, &n)| v * n as f64)
            .sum()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vector {
        let mut out = Vector::zeros(self.total_dim());
        let mut offset = 0;
        for (i, &ni) in self.node_dims.iter().enumerate() {
            for t in 0..ni {
                out[offset + t] = match &self.kind {
                    NoiseKind::Gaussian { sigma } if sigma[i] > 0.0 => {
                        Normal::new(0.0, sigma[i]).expect("validated sigma").sample(rng)
                    }
                    NoiseKind::Uniform { half_width } if half_width[i] > 0.0 => {
                        Uniform::new_inclusive(-half_width[i], half_width[i])
                            .expect("validated half width")
                            .sample(rng)
                    }
                    _ => 0.0,
                };
            }
            offset += ni;
        }
        out
    }
}

pub fn sample_noise(model: &NoiseModel, rng: &mut impl Rng) -> Vector {
    model.sample(rng)
}

/// Independent random streams split from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    Graph = 0,
    Noise = 1,
    Delay = 2,
    Aux = 3,
}

/// ChaCha stream for `(replicate, purpose)` under `master_seed`.
pub fn stream_rng(master_seed: u64, replicate: u64, purpose: StreamPurpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((replicate << 2) | purpose as u64);
    rng
}
