//! Gain schedules, the measurement map and the consensus+innovation update.
//!
//! Node `i` updates as
//!
//! ```text
//! x_i(k+1) = x_i(k) + a(k) H_iᵀ (z_i - H_i x_i(k))
//!          + b(k) Σ_{j ∈ N_i(k)} a_ij (x_j(k - λ_ji(k)) - x_i(k))
//! ```
//!
//! The same step is available in stacked matrix form, and the estimation
//! error obeys a linear recursion driven by the noise; both are kept so that
//! each path can check the others.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::graph::{delayed_adjacency_blocks, DelayRealization, GraphError, WeightedDigraph};
use crate::linalg::{kron_identity, Matrix, Vector};
use crate::processes::ObservationSet;

/// Per-coordinate agreement required between the per-node and stacked forms.
pub const FORM_TOL: f64 = 1e-12;

/// Relative margin applied to the strict admissible-gain inequality.
pub const GAIN_BOUND_MARGIN: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("invalid gain schedule: {0}")]
    InvalidGains(String),
    #[error("invalid assumption constants: {0}")]
    InvalidConstants(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("delayed read x_{node}(k-{lag}) is older than the history depth {depth}")]
    HistoryUnderflow {
        node: usize,
        lag: usize,
        depth: usize,
    },
    #[error("per-node and stacked updates disagree by {0:e}")]
    FormMismatch(f64),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T> = std::result::Result<T, EstimatorError>;

pub type GainFn = Arc<dyn Fn(usize) -> f64 + Send + Sync>;

/// Innovation gain `a(k)` and consensus gain `b(k)`.
#[derive(Clone)]
pub enum GainSchedule {
    /// `a(k) = 1/(k+1)^τ1`, `b(k) = 1/(k+1)^τ2`.
    PowerLaw { tau1: f64, tau2: f64 },
    /// `a(k) = α_a/(k+1+k₀)^τ1`, `b(k) = α_b/(k+1+k₀)^τ2`.
    ShiftedPowerLaw {
        scale_a: f64,
        scale_b: f64,
        offset: f64,
        tau1: f64,
        tau2: f64,
    },
    Custom {
        label: String,
        innovation: GainFn,
        consensus: GainFn,
    },
}

impl fmt::Debug for GainSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PowerLaw { tau1, tau2 } => f
                .debug_struct("PowerLaw")
                .field("tau1", tau1)
                .field("tau2", tau2)
                .finish(),
            Self::ShiftedPowerLaw {
                scale_a,
                scale_b,
                offset,
                tau1,
                tau2,
            } => f
                .debug_struct("ShiftedPowerLaw")
                .field("scale_a", scale_a)
                .field("scale_b", scale_b)
                .field("offset", offset)
                .field("tau1", tau1)
                .field("tau2", tau2)
                .finish(),
            Self::Custom { label, .. } => f.debug_struct("Custom").field("label", label).finish(),
        }
    }
}

fn check_exponents(tau1: f64, tau2: f64) -> Result<()> {
    if !(0.5 < tau2 && tau2 <= tau1 && tau1 <= 1.0) {
        return Err(EstimatorError::InvalidGains(format!(
            "exponents must satisfy 0.5 < tau2 <= tau1 <= 1, got tau1={tau1}, tau2={tau2}"
        )));
    }
    Ok(())
}

impl GainSchedule {
    pub fn power_law(tau1: f64, tau2: f64) -> Result<Self> {
        check_exponents(tau1, tau2)?;
        Ok(Self::PowerLaw { tau1, tau2 })
    }

    pub fn shifted_power_law(
        scale_a: f64,
        scale_b: f64,
        offset: f64,
        tau1: f64,
        tau2: f64,
    ) -> Result<Self> {
        check_exponents(tau1, tau2)?;
        if !(scale_a > 0.0 && scale_b > 0.0 && offset >= 0.0) {
            return Err(EstimatorError::InvalidGains(
                "scales must be positive and the offset nonnegative".into(),
            ));
        }
        Ok(Self::ShiftedPowerLaw {
            scale_a,
            scale_b,
            offset,
            tau1,
            tau2,
        })
    }

    pub fn custom(
        label: impl Into<String>,
        innovation: impl Fn(usize) -> f64 + Send + Sync + 'static,
        consensus: impl Fn(usize) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::Custom {
            label: label.into(),
            innovation: Arc::new(innovation),
            consensus: Arc::new(consensus),
        }
    }

    /// Innovation gain `a(k)`.
    pub fn innovation(&self, k: usize) -> f64 {
        match self {
            Self::PowerLaw { tau1, .. } => (k as f64 + 1.0).powf(-tau1),
            Self::ShiftedPowerLaw {
                scale_a,
                offset,
                tau1,
                ..
            } => scale_a * (k as f64 + 1.0 + offset).powf(-tau1),
            Self::Custom { innovation, .. } => innovation(k),
        }
    }

    /// Consensus gain `b(k)`.
    pub fn consensus(&self, k: usize) -> f64 {
        match self {
            Self::PowerLaw { tau2, .. } => (k as f64 + 1.0).powf(-tau2),
            Self::ShiftedPowerLaw {
                scale_b,
                offset,
                tau2,
                ..
            } => scale_b * (k as f64 + 1.0 + offset).powf(-tau2),
            Self::Custom { consensus, .. } => consensus(k),
        }
    }

    pub fn gains(&self, k: usize) -> (f64, f64) {
        (self.innovation(k), self.consensus(k))
    }

    /// `b(k)/a(k)`.
    pub fn ratio(&self, k: usize) -> f64 {
        self.consensus(k) / self.innovation(k)
    }

    fn exponents(&self) -> Option<(f64, f64)> {
        match *self {
            Self::PowerLaw { tau1, tau2 } | Self::ShiftedPowerLaw { tau1, tau2, .. } => {
                Some((tau1, tau2))
            }
            Self::Custom { .. } => None,
        }
    }

    /// `max_{k <= horizon} a(k)/b(k)`.
    pub fn ratio_bound(&self, horizon: usize) -> f64 {
        (0..=horizon)
            .map(|k| self.innovation(k) / self.consensus(k))
            .fold(0.0, f64::max)
    }

    pub fn describe(&self) -> String {
        format!("{self:?}")
    }
}

/// Bounds used by the gain condition and the invertibility certificate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionConstants {
    pub nodes: usize,
    /// Bound on `|a_ij(k)|`.
    pub beta_a: f64,
    /// Bound on `‖H_i(k)‖`.
    pub beta_h: f64,
    /// Bound on the conditional noise second moment.
    pub beta_v: f64,
    /// Ratio bound `a(k) <= C_a b(k)`.
    pub c_a: f64,
    pub max_delay: usize,
    pub kappa: Option<f64>,
}

impl AssumptionConstants {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(EstimatorError::InvalidConstants(what.into()));
        if self.nodes == 0 {
            return bad("node count must be positive");
        }
        if !(self.beta_a > 0.0) || !(self.beta_h >= 0.0) || !(self.beta_v >= 0.0) {
            return bad("bounds must be positive");
        }
        if !(self.c_a > 0.0) {
            return bad("C_a must be positive");
        }
        if let Some(k) = self.kappa {
            if !(k > 0.0 && k < 1.0) {
                return bad("kappa must lie in (0,1)");
            }
        }
        Ok(())
    }
}

/// Supremum over κ of the admissible-gain expression and its maximizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainBound {
    pub bound: f64,
    pub kappa_star: f64,
}

fn gain_bound_terms(c: &AssumptionConstants, kappa: f64) -> (f64, f64) {
    let n = c.nodes as f64;
    let nsq = n * n.sqrt();
    let first = kappa / (2.0 * (n * c.beta_a + nsq * c.beta_a + c.c_a * c.beta_h * c.beta_h));
    // (1-r)/(1-r^{d+1}) = 1/Σ_{q=0}^d r^q with r = 1/(1-κ)
    let r = 1.0 / (1.0 - kappa);
    let geometric: f64 = (0..=c.max_delay).map(|q| r.powi(q as i32)).sum();
    let second = if c.beta_a == 0.0 {
        f64::INFINITY
    } else {
        kappa / (2.0 * nsq * c.beta_a * geometric)
    };
    (first, second)
}

/// Smaller of the two admissible-gain expressions at κ.
pub fn gain_bound_objective(c: &AssumptionConstants, kappa: f64) -> f64 {
    let (a, b) = gain_bound_terms(c, kappa);
    a.min(b)
}

/// Maximizes `min{…}` over κ ∈ (0,1): grid bracketing, then golden-section
/// refinement to 1e-10 in κ.
pub fn admissible_gain_bound(c: &AssumptionConstants) -> GainBound {
    const GRID: usize = 2000;
    let f = |k: f64| gain_bound_objective(c, k);
    let (best, _) = (1..GRID)
        .map(|i| i as f64 / GRID as f64)
        .map(|k| (k, f(k)))
        .fold((0.5, f64::NEG_INFINITY), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc });
    let step = 1.0 / GRID as f64;
    let (mut lo, mut hi) = ((best - step).max(0.0), (best + step).min(1.0));
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-10 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    let kappa_star = 0.5 * (lo + hi);
    let bound = if c.max_delay == 0 {
        // Both terms are linear in κ; the supremum is the open-interval limit at κ → 1⁻.
        let n = c.nodes as f64;
        let first = 1.0 / (2.0 * (n * c.beta_a + n * n.sqrt() * c.beta_a + c.c_a * c.beta_h * c.beta_h));
        let second = 1.0 / (2.0 * n * n.sqrt() * c.beta_a);
        first.min(second)
    } else {
        f(kappa_star)
    };
    GainBound { bound, kappa_star }
}

/// Per-clause outcome of the gain assumptions on a finite horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainReport {
    pub horizon: usize,
    pub monotone_decrease: bool,
    /// `b²(k)/a(k)` nonincreasing with local decay exponent > 0.
    pub ratio_vanishing: bool,
    /// Local decay exponent of `a(k)` at most 1, so partial sums keep growing.
    pub innovation_sum_diverging: bool,
    /// Local decay exponent of `b(k)` above 1/2.
    pub consensus_square_summable: bool,
    pub decay_proxy: bool,
    pub square_summable_proxy: bool,
    pub decay_analytic: Option<bool>,
    pub square_summable_analytic: Option<bool>,
    pub c_a: f64,
    pub sup_consensus: f64,
    pub gain_bound: GainBound,
    pub below_gain_bound: bool,
}

impl GainReport {
    pub fn decay_ok(&self) -> bool {
        self.decay_analytic.unwrap_or(self.decay_proxy)
    }

    pub fn square_summable_ok(&self) -> bool {
        self.square_summable_analytic.unwrap_or(self.square_summable_proxy)
    }
}

fn local_exponent(f: impl Fn(usize) -> f64, horizon: usize) -> f64 {
    let (k1, k2) = (horizon / 2, horizon);
    let (v1, v2) = (f(k1), f(k2));
    if v1 <= 0.0 || v2 <= 0.0 {
        return f64::NAN;
    }
    (v1 / v2).ln() / ((k2 as f64 + 1.0) / (k1 as f64 + 1.0)).ln()
}

/// Checks the gain assumptions: decay, square summability and the admissible bound. When `c.c_a` is not positive it is replaced by the
/// horizon maximum of `a(k)/b(k)`.
pub fn check_gain_assumptions(
    s: &GainSchedule,
    c: &AssumptionConstants,
    horizon: usize,
) -> Result<GainReport> {
    if horizon < 2 {
        return Err(EstimatorError::InvalidGains("horizon must be at least 2".into()));
    }
    let a: Vec<f64> = (0..=horizon).map(|k| s.innovation(k)).collect();
    let b: Vec<f64> = (0..=horizon).map(|k| s.consensus(k)).collect();
    if a.iter().chain(&b).any(|&v| !(v > 0.0)) {
        return Err(EstimatorError::InvalidGains("gains must be positive".into()));
    }
    let nonincreasing = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0]);
    let pa = local_exponent(|k| s.innovation(k), horizon);
    let pb = local_exponent(|k| s.consensus(k), horizon);
    let strictly_down = a[horizon] < a[0] && b[horizon] < b[0];
    let monotone_decrease = nonincreasing(&a) && nonincreasing(&b) && strictly_down && pa > 0.0 && pb > 0.0;
    let ratio: Vec<f64> = a.iter().zip(&b).map(|(x, y)| y * y / x).collect();
    let ratio_vanishing = nonincreasing(&ratio) && 2.0 * pb - pa > 1e-6;
    let innovation_sum_diverging = pa <= 1.0 + 1e-6;
    let consensus_square_summable = pb > 0.5 + 1e-6;
    let a_over_b_bounded = pa >= pb - 1e-6;
    let decay_proxy = monotone_decrease && ratio_vanishing && innovation_sum_diverging && a_over_b_bounded;

    let (decay_analytic, square_summable_analytic) = match s.exponents() {
        Some((t1, t2)) => (
            Some(0.5 < t2 && t2 <= t1 && t1 <= 1.0),
            Some(t2 > 0.5),
        ),
        None => (None, None),
    };

    let mut constants = c.clone();
    if !(constants.c_a > 0.0) {
        constants.c_a = s.ratio_bound(horizon);
    }
    constants.validate()?;
    let sup_consensus = b.iter().copied().fold(0.0, f64::max);
    let gain_bound = admissible_gain_bound(&constants);
    let below_gain_bound = sup_consensus < gain_bound.bound * (1.0 - GAIN_BOUND_MARGIN);
    Ok(GainReport {
        horizon,
        monotone_decrease,
        ratio_vanishing,
        innovation_sum_diverging,
        consensus_square_summable,
        decay_proxy,
        square_summable_proxy: consensus_square_summable,
        decay_analytic,
        square_summable_analytic,
        c_a: constants.c_a,
        sup_consensus,
        gain_bound,
        below_gain_bound,
    })
}

/// True parameter and per-node measurement dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    pub x0: Vector,
    pub node_dims: Vec<usize>,
}

impl MeasurementModel {
    pub fn new(x0: Vector, node_dims: Vec<usize>) -> Result<Self> {
        let n = x0.len();
        if let Some(bad) = node_dims.iter().find(|&&ni| ni > n) {
            return Err(EstimatorError::Shape(format!(
                "node measurement dimension {bad} exceeds parameter dimension {n}"
            )));
        }
        Ok(Self { x0, node_dims })
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn nodes(&self) -> usize {
        self.node_dims.len()
    }

    /// `z = H x0 + v` for the stacked observation matrix `H`.
    pub fn measure(&self, h: &Matrix, v: &Vector) -> Result<Vector> {
        let rows: usize = self.node_dims.iter().sum();
        if h.shape() != (rows, self.dim()) || v.len() != rows {
            return Err(EstimatorError::Shape(format!(
                "H is {}x{}, v has {} entries; expected {rows}x{} and {rows}",
                h.nrows(),
                h.ncols(),
                v.len(),
                self.dim()
            )));
        }
        Ok(h * &self.x0 + v)
    }

    /// `1_N ⊗ x0`.
    pub fn consensus_target(&self) -> Vector {
        let n = self.dim();
        Vector::from_fn(self.nodes() * n, |r, _| self.x0[r % n])
    }
}

/// Stacked estimates with the last `d+1` steps kept for delayed reads.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    nodes: usize,
    dim: usize,
    // history[0] = x(k), history[q] = x(k-q)
    history: Vec<Vector>,
    k: usize,
}

impl NetworkState {
    /// Starts at `x(0) = initial`, with `x(-q) = x(0)` for `q = 1..=d`.
    pub fn new(nodes: usize, dim: usize, initial: Vector, max_delay: usize) -> Result<Self> {
        if initial.len() != nodes * dim {
            return Err(EstimatorError::Shape(format!(
                "initial estimate has {} entries, expected {}",
                initial.len(),
                nodes * dim
            )));
        }
        Ok(Self {
            nodes,
            dim,
            history: vec![initial; max_delay + 1],
            k: 0,
        })
    }

    pub fn zeros(nodes: usize, dim: usize, max_delay: usize) -> Self {
        Self::new(nodes, dim, Vector::zeros(nodes * dim), max_delay).expect("consistent shape")
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> usize {
        self.k
    }

    pub fn depth(&self) -> usize {
        self.history.len()
    }

    /// `x(k)`.
    pub fn current(&self) -> &Vector {
        &self.history[0]
    }

    /// `x(k - lag)`.
    pub fn lagged(&self, lag: usize) -> Option<&Vector> {
        self.history.get(lag)
    }

    /// `x_i(k - lag)`.
    pub fn estimate(&self, node: usize, lag: usize) -> Result<Vector> {
        let x = self.history.get(lag).ok_or(EstimatorError::HistoryUnderflow {
            node,
            lag,
            depth: self.history.len() - 1,
        })?;
        Ok(x.rows(node * self.dim, self.dim).into_owned())
    }

    /// Shifts the history and makes `next` the estimate for `k+1`.
    pub fn push(&mut self, next: Vector) {
        self.history.rotate_right(1);
        self.history[0] = next;
        self.k += 1;
    }
}

/// Inputs of one synchronous network step.
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a> {
    pub observations: &'a ObservationSet,
    pub graph: &'a WeightedDigraph,
    pub delays: &'a DelayRealization,
    pub innovation_gain: f64,
    pub consensus_gain: f64,
}

impl StepInput<'_> {
    fn check(&self, state: &NetworkState) -> Result<()> {
        if self.graph.node_count() != state.nodes()
            || self.observations.nodes() != state.nodes()
            || self.delays.nodes() != state.nodes()
            || self.observations.dim() != state.dim()
        {
            return Err(EstimatorError::Shape(
                "graph, observations, delays and state disagree on N or n".into(),
            ));
        }
        Ok(())
    }
}

/// `x_i(k+1)` for one node.
pub fn node_update(
    state: &NetworkState,
    node: usize,
    input: &StepInput<'_>,
    z_i: &Vector,
) -> Result<Vector> {
    let h = input.observations.block(node);
    if z_i.len() != h.nrows() {
        return Err(EstimatorError::Shape(format!(
            "z_{node} has {} entries, H_{node} has {} rows",
            z_i.len(),
            h.nrows()
        )));
    }
    let x_i = state.estimate(node, 0)?;
    let innovation = h.transpose() * (z_i - h * &x_i);
    let mut consensus = Vector::zeros(state.dim());
    for j in input.graph.neighbors(node) {
        let lag = input.delays.lag(j, node);
        let x_j = state.estimate(j, lag)?;
        consensus += (x_j - &x_i) * input.graph.weight(node, j);
    }
    Ok(x_i + innovation * input.innovation_gain + consensus * input.consensus_gain)
}

/// `x(k+1)` assembled node by node.
pub fn per_node_step(state: &NetworkState, input: &StepInput<'_>, z: &Vector) -> Result<Vector> {
    input.check(state)?;
    if z.len() != input.observations.total_rows() {
        return Err(EstimatorError::Shape(format!(
            "z has {} entries, expected {}",
            z.len(),
            input.observations.total_rows()
        )));
    }
    let n = state.dim();
    let mut next = Vector::zeros(state.nodes() * n);
    for i in 0..state.nodes() {
        let off = input.observations.offset(i);
        let z_i = z.rows(off, input.observations.block(i).nrows()).into_owned();
        next.rows_mut(i * n, n).copy_from(&node_update(state, i, input, &z_i)?);
    }
    Ok(next)
}

/// Delay-independent part `I - b D⊗I_n - a 𝓗ᵀ𝓗`.
pub fn local_transition(input: &StepInput<'_>) -> Matrix {
    let n = input.observations.dim();
    let nn = input.graph.node_count() * n;
    Matrix::identity(nn, nn)
        - kron_identity(&input.graph.degree_matrix(), n) * input.consensus_gain
        - input.observations.gram() * input.innovation_gain
}

fn delayed_sum(
    history: &NetworkState,
    blocks: &[Matrix],
) -> Result<Vector> {
    let mut acc = Vector::zeros(history.nodes() * history.dim());
    for (q, block) in blocks.iter().enumerate() {
        if block.iter().all(|&v| v == 0.0) {
            continue;
        }
        let x = history.lagged(q).ok_or(EstimatorError::HistoryUnderflow {
            node: 0,
            lag: q,
            depth: history.depth() - 1,
        })?;
        acc += block * x;
    }
    Ok(acc)
}

/// `x(k+1)` from the stacked matrix form.
pub fn compact_step(state: &NetworkState, input: &StepInput<'_>, z: &Vector) -> Result<Vector> {
    input.check(state)?;
    let n = state.dim();
    let blocks = delayed_adjacency_blocks(input.graph, input.delays, n)?;
    let hd = input.observations.block_diagonal();
    Ok(local_transition(input) * state.current()
        + delayed_sum(state, &blocks)? * input.consensus_gain
        + hd.transpose() * z * input.innovation_gain)
}

/// Which evaluation of the update [`network_step`] performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepMode {
    #[default]
    PerNode,
    Compact,
    /// Runs both and fails if they differ by more than [`FORM_TOL`].
    CrossChecked,
}

/// Advances the network state by one step.
pub fn network_step(
    state: &mut NetworkState,
    input: &StepInput<'_>,
    z: &Vector,
    mode: StepMode,
) -> Result<()> {
    let next = match mode {
        StepMode::PerNode => per_node_step(state, input, z)?,
        StepMode::Compact => compact_step(state, input, z)?,
        StepMode::CrossChecked => {
            let a = per_node_step(state, input, z)?;
            let b = compact_step(state, input, z)?;
            let diff = (&a - &b).amax();
            if diff > FORM_TOL {
                return Err(EstimatorError::FormMismatch(diff));
            }
            a
        }
    };
    state.push(next);
    Ok(())
}

/// `e(k+1)` from the error recursion, with `errors` holding `e(k-d..k)`.
pub fn error_step(errors: &NetworkState, input: &StepInput<'_>, v: &Vector) -> Result<Vector> {
    input.check(errors)?;
    let n = errors.dim();
    let blocks = delayed_adjacency_blocks(input.graph, input.delays, n)?;
    let hd = input.observations.block_diagonal();
    Ok(local_transition(input) * errors.current()
        + delayed_sum(errors, &blocks)? * input.consensus_gain
        + hd.transpose() * v * input.innovation_gain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processes::ObservationSet;
    use approx::assert_abs_diff_eq;

    fn two_node_obs() -> ObservationSet {
        ObservationSet::new(
            1,
            vec![Matrix::from_element(1, 1, 0.0), Matrix::from_element(1, 1, 1.0)],
        )
        .unwrap()
    }

    fn two_node_graph() -> WeightedDigraph {
        WeightedDigraph::from_rows(&[vec![0.0, 1.0], vec![0.3, 0.0]]).unwrap()
    }

    fn constants(nodes: usize, d: usize) -> AssumptionConstants {
        AssumptionConstants {
            nodes,
            beta_a: 1.0,
            beta_h: 1.0,
            beta_v: 1.0,
            c_a: 1.0,
            max_delay: d,
            kappa: None,
        }
    }

    #[test]
    fn power_law_constructor_enforces_regime() {
        assert!(GainSchedule::power_law(0.4, 0.4).is_err());
        assert!(GainSchedule::power_law(0.8, 0.9).is_err());
        assert!(GainSchedule::power_law(1.0, 1.0).is_ok());
        let g = GainSchedule::power_law(1.0, 0.75).unwrap();
        for k in 0..200 {
            assert!(g.innovation(k + 1) <= g.innovation(k));
            assert!(g.consensus(k + 1) <= g.consensus(k));
        }
    }

    #[test]
    fn gain_assumption_examples() {
        let c = constants(2, 0);
        let r = check_gain_assumptions(&GainSchedule::power_law(1.0, 1.0).unwrap(), &c, 1000)
            .unwrap();
        assert_eq!(r.decay_analytic, Some(true));
        assert_eq!(r.square_summable_analytic, Some(true));
        assert!(r.decay_proxy && r.square_summable_proxy);

        let harmonic = GainSchedule::custom("1/(k+1)", |k| 1.0 / (k as f64 + 1.0), |k| {
            1.0 / (k as f64 + 1.0)
        });
        let r = check_gain_assumptions(&harmonic, &c, 1000).unwrap();
        assert!(r.square_summable_ok());
        assert!(r.decay_ok());

        let constant = GainSchedule::custom("const", |_| 0.1, |_| 0.1);
        let r = check_gain_assumptions(&constant, &c, 1000).unwrap();
        assert!(!r.decay_ok());
        assert!(!r.square_summable_ok());
    }

    #[test]
    fn gain_bound_at_zero_delay_is_first_expression_limit() {
        for (n, ba, bh, ca) in [(2, 1.0, 1.0, 1.0), (4, 0.5, 3.0, 2.0), (1, 2.0, 0.3, 1.0)] {
            let c = AssumptionConstants {
                nodes: n,
                beta_a: ba,
                beta_h: bh,
                c_a: ca,
                ..constants(n, 0)
            };
            let nf = n as f64;
            let expected = 1.0 / (2.0 * (nf * ba + nf * nf.sqrt() * ba + ca * bh * bh));
            let got = admissible_gain_bound(&c);
            assert_abs_diff_eq!(got.bound, expected, epsilon = 1e-12 * expected.max(1.0));
            assert!(got.kappa_star > 1.0 - 1e-8);
        }
    }

    #[test]
    fn gain_bound_nonincreasing_in_delay() {
        let mut prev = f64::INFINITY;
        for d in [0, 1, 2, 5] {
            let b = admissible_gain_bound(&constants(3, d));
            assert!(b.bound > 0.0);
            assert!(b.bound <= prev * (1.0 + 1e-12), "d={d}: {} > {prev}", b.bound);
            assert!(b.kappa_star > 0.0 && b.kappa_star < 1.0);
            prev = b.bound;
        }
    }

    #[test]
    fn gain_bound_single_node_vanishing_weights() {
        let c = AssumptionConstants {
            beta_a: 1e-12,
            beta_h: 2.0,
            c_a: 1.5,
            ..constants(1, 1)
        };
        let b = admissible_gain_bound(&c);
        assert_abs_diff_eq!(b.bound, 1.0 / (2.0 * 1.5 * 4.0), epsilon = 1e-6);
        assert!(b.kappa_star > 0.99);
    }

    #[test]
    fn gain_bound_interior_optimum_balances_terms() {
        // A large C_a makes the first term the binding one for small κ.
        let c = AssumptionConstants {
            c_a: 60.0,
            ..constants(3, 2)
        };
        let b = admissible_gain_bound(&c);
        let (first, second) = gain_bound_terms(&c, b.kappa_star);
        assert!((first - second).abs() < 1e-8 * first);
        // Neighbouring κ never beat the reported value.
        for dk in [-1e-3, 1e-3, -1e-2, 1e-2] {
            assert!(gain_bound_objective(&c, b.kappa_star + dk) <= b.bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn measure_examples() {
        let m = MeasurementModel::new(Vector::from_vec(vec![1.0, -2.0]), vec![2]).unwrap();
        let z = m.measure(&Matrix::identity(2, 2), &Vector::zeros(2)).unwrap();
        assert_eq!(z, m.x0);
        let v = Vector::from_vec(vec![0.3, 0.4]);
        assert_eq!(m.measure(&Matrix::zeros(2, 2), &v).unwrap(), v);
        assert!(m.measure(&Matrix::zeros(3, 2), &v).is_err());
        assert!(MeasurementModel::new(Vector::zeros(2), vec![3]).is_err());
    }

    #[test]
    fn node_update_examples() {
        let obs = two_node_obs();
        let g = two_node_graph();
        let delays = DelayRealization::zero(2, 0);
        let state = NetworkState::new(2, 1, Vector::from_vec(vec![1.0, 0.0]), 0).unwrap();
        let input = StepInput {
            observations: &obs,
            graph: &g,
            delays: &delays,
            innovation_gain: 0.1,
            consensus_gain: 0.1,
        };
        let z = Vector::zeros(2);
        let next = per_node_step(&state, &input, &z).unwrap();
        assert_abs_diff_eq!(next[0], 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(next[1], 0.03, epsilon = 1e-15);

        let frozen = StepInput {
            innovation_gain: 0.0,
            consensus_gain: 0.0,
            ..input
        };
        assert_eq!(per_node_step(&state, &frozen, &z).unwrap(), *state.current());
    }

    #[test]
    fn full_correction_recovers_parameter_in_one_step() {
        let x0 = Vector::from_vec(vec![0.5, -1.5, 2.0]);
        let obs = ObservationSet::new(3, vec![Matrix::identity(3, 3)]).unwrap();
        let g = WeightedDigraph::empty(1);
        let delays = DelayRealization::zero(1, 0);
        let state = NetworkState::zeros(1, 3, 0);
        let input = StepInput {
            observations: &obs,
            graph: &g,
            delays: &delays,
            innovation_gain: 1.0,
            consensus_gain: 0.7,
        };
        let next = per_node_step(&state, &input, &x0).unwrap();
        assert_abs_diff_eq!((next - &x0).amax(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn delayed_read_past_history_underflows() {
        let obs = two_node_obs();
        let g = two_node_graph();
        let delays = DelayRealization::from_rows(&[vec![0, 2], vec![0, 0]], 2).unwrap();
        let state = NetworkState::zeros(2, 1, 1);
        let input = StepInput {
            observations: &obs,
            graph: &g,
            delays: &delays,
            innovation_gain: 0.1,
            consensus_gain: 0.1,
        };
        let z = Vector::zeros(2);
        assert!(matches!(
            node_update(&state, 1, &input, &z.rows(1, 1).into_owned()),
            Err(EstimatorError::HistoryUnderflow { lag: 2, .. })
        ));
    }

    #[test]
    fn consensus_off_decouples_nodes() {
        let obs = two_node_obs();
        let g = two_node_graph();
        let delays = DelayRealization::zero(2, 0);
        let state = NetworkState::new(2, 1, Vector::from_vec(vec![1.0, 2.0]), 0).unwrap();
        let z = Vector::from_vec(vec![0.0, 5.0]);
        let input = StepInput {
            observations: &obs,
            graph: &g,
            delays: &delays,
            innovation_gain: 0.5,
            consensus_gain: 0.0,
        };
        let empty = WeightedDigraph::empty(2);
        let no_links = StepInput {
            graph: &empty,
            consensus_gain: 0.3,
            ..input
        };
        let a = per_node_step(&state, &input, &z).unwrap();
        let b = per_node_step(&state, &no_links, &z).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, Vector::from_vec(vec![1.0, 3.5]));
    }

    #[test]
    fn error_step_examples() {
        let obs = ObservationSet::new(2, vec![Matrix::identity(2, 2)]).unwrap();
        let g = WeightedDigraph::empty(1);
        let delays = DelayRealization::zero(1, 0);
        let input = StepInput {
            observations: &obs,
            graph: &g,
            delays: &delays,
            innovation_gain: 0.25,
            consensus_gain: 0.0,
        };
        let zero = NetworkState::zeros(1, 2, 0);
        assert_eq!(error_step(&zero, &input, &Vector::zeros(2)).unwrap(), Vector::zeros(2));
        let e = NetworkState::new(1, 2, Vector::from_vec(vec![1.0, -4.0]), 0).unwrap();
        let next = error_step(&e, &input, &Vector::zeros(2)).unwrap();
        assert_eq!(next, Vector::from_vec(vec![0.75, -3.0]));
    }

    #[test]
    fn history_is_prefilled_with_initial_estimate() {
        let x = Vector::from_vec(vec![1.0, 2.0]);
        let mut s = NetworkState::new(2, 1, x.clone(), 3).unwrap();
        assert_eq!(s.depth(), 4);
        assert_eq!(s.lagged(3), Some(&x));
        s.push(Vector::from_vec(vec![5.0, 6.0]));
        assert_eq!(s.lagged(1), Some(&x));
        assert_eq!(s.estimate(1, 0).unwrap()[0], 6.0);
        assert!(s.estimate(0, 4).is_err());
    }
}
