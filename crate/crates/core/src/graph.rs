//! Weighted digraphs, Laplacian algebra and delay matrices.
//!
//! Edge convention: `a_ij != 0` is a link from node `j` into node `i`, so row
//! `i` of the adjacency lists the in-neighbours of `i`. A delay realization is
//! addressed by `(from, to)`: `lag(j, i)` is the delay carried by link `j -> i`.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::{kron_identity, Matrix};

/// Default absolute tolerance for [`WeightedDigraph::is_balanced`].
pub const BALANCE_TOL: f64 = 1e-10;

/// Tolerance on the normalization of delay distributions.
pub const PROBABILITY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("adjacency matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("adjacency diagonal entry ({0},{0}) is nonzero")]
    NonzeroDiagonal(usize),
    #[error("adjacency entry ({0},{1}) is not finite")]
    NonFinite(usize, usize),
    #[error("adjacency entry ({i},{j}) = {value} exceeds the weight bound {bound}")]
    WeightBound {
        i: usize,
        j: usize,
        value: f64,
        bound: f64,
    },
    #[error("adjacency entry ({0},{1}) is negative")]
    NegativeWeight(usize, usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("delay probabilities for link {from}->{to}: {reason}")]
    DelayDistribution {
        from: usize,
        to: usize,
        reason: String,
    },
    #[error("delay realization entry ({from},{to}) = {lag} is invalid for max delay {max_delay}")]
    DelayEntry {
        from: usize,
        to: usize,
        lag: usize,
        max_delay: usize,
    },
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Weighted adjacency `A_G` of a communication graph.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDigraph {
    adjacency: Matrix,
}

impl WeightedDigraph {
    pub fn new(adjacency: Matrix) -> Result<Self> {
        let (rows, cols) = adjacency.shape();
        if rows != cols {
            return Err(GraphError::NotSquare { rows, cols });
        }
        for i in 0..rows {
            for j in 0..cols {
                if !adjacency[(i, j)].is_finite() {
                    return Err(GraphError::NonFinite(i, j));
                }
            }
            if adjacency[(i, i)] != 0.0 {
                return Err(GraphError::NonzeroDiagonal(i));
            }
        }
        Ok(Self { adjacency })
    }

    /// Like [`new`](Self::new) but also enforces `|a_ij| <= beta_a`.
    pub fn with_bound(adjacency: Matrix, beta_a: f64) -> Result<Self> {
        let g = Self::new(adjacency)?;
        g.check_bound(beta_a)?;
        Ok(g)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = crate::linalg::from_rows(rows)
            .ok_or_else(|| GraphError::Dimension("ragged adjacency rows".into()))?;
        Self::new(m)
    }

    /// Graph on `n` nodes with no links.
    pub fn empty(n: usize) -> Self {
        Self {
            adjacency: Matrix::zeros(n, n),
        }
    }

    pub fn check_bound(&self, beta_a: f64) -> Result<()> {
        for ((i, j), v) in self.entries() {
            if v.abs() > beta_a {
                return Err(GraphError::WeightBound {
                    i,
                    j,
                    value: v,
                    bound: beta_a,
                });
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[(i, j)]
    }

    /// In-neighbours of `i`, i.e. `{j : a_ij != 0}`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(move |&j| self.adjacency[(i, j)] != 0.0)
    }

    pub fn max_abs_weight(&self) -> f64 {
        crate::linalg::max_abs(&self.adjacency)
    }

    fn entries(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        let n = self.node_count();
        (0..n).flat_map(move |i| (0..n).map(move |j| ((i, j), self.adjacency[(i, j)])))
    }

    pub fn is_nonnegative(&self) -> bool {
        self.adjacency.iter().all(|&v| v >= 0.0)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.adjacency.row_iter().map(|r| r.sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.adjacency.column_iter().map(|c| c.sum()).collect()
    }

    /// `D_G = diag(Σ_j a_ij)`.
    pub fn degree_matrix(&self) -> Matrix {
        let n = self.node_count();
        let mut d = Matrix::zeros(n, n);
        for (i, s) in self.row_sums().into_iter().enumerate() {
            d[(i, i)] = s;
        }
        d
    }

    /// `L_G = D_G - A_G`.
    pub fn laplacian(&self) -> Matrix {
        let mut l = -self.adjacency.clone();
        for (i, s) in self.row_sums().into_iter().enumerate() {
            l[(i, i)] = s;
        }
        l
    }

    /// In-weight equals out-weight at every node, up to `tol`.
    pub fn is_balanced(&self, tol: f64) -> bool {
        self.row_sums()
            .iter()
            .zip(self.column_sums())
            .all(|(r, c)| (r - c).abs() <= tol)
    }

    /// Whether some root reaches every node along links `j -> i` (`a_ij > 0`).
    pub fn has_spanning_tree(&self) -> Result<bool> {
        let n = self.node_count();
        if let Some(((i, j), _)) = self.entries().find(|(_, v)| *v < 0.0) {
            return Err(GraphError::NegativeWeight(i, j));
        }
        if n == 0 {
            return Ok(false);
        }
        // out[j] lists the nodes that j feeds.
        let mut out = vec![Vec::new(); n];
        for ((i, j), v) in self.entries() {
            if v > 0.0 {
                out[j].push(i);
            }
        }
        let reaches_all = |root: usize| {
            let mut seen = vec![false; n];
            let mut queue = VecDeque::from([root]);
            seen[root] = true;
            let mut count = 1;
            while let Some(u) = queue.pop_front() {
                for &w in &out[u] {
                    if !seen[w] {
                        seen[w] = true;
                        count += 1;
                        queue.push_back(w);
                    }
                }
            }
            count == n
        };
        Ok((0..n).any(reaches_all))
    }

    /// Entrywise mixture `Σ_l w_l A_l` over graphs on the same node set.
    pub fn weighted_mean<'a>(
        graphs: impl IntoIterator<Item = (f64, &'a WeightedDigraph)>,
        n: usize,
    ) -> Result<Self> {
        let mut acc = Matrix::zeros(n, n);
        for (w, g) in graphs {
            if g.node_count() != n {
                return Err(GraphError::Dimension(format!(
                    "graph has {} nodes, expected {n}",
                    g.node_count()
                )));
            }
            acc += g.adjacency() * w;
        }
        Self::new(acc)
    }
}

/// `(L + Lᵀ)/2`, bit-symmetric.
pub fn symmetrized_laplacian(l: &Matrix) -> Matrix {
    crate::linalg::symmetric_part(l)
}

/// Per-link delay probabilities as a function of `(k, from, to)`.
pub type DelaySchedule = Arc<dyn Fn(usize, usize, usize) -> Vec<f64> + Send + Sync>;

/// Coupled sampler replacing independent per-link draws.
pub type DelayCoupling =
    Arc<dyn Fn(&DelayModel, usize, &mut dyn rand::RngCore) -> DelayRealization + Send + Sync>;

/// Distribution of the random link delays `λ_ji(k) ∈ {0..d}`.
#[derive(Clone)]
pub struct DelayModel {
    nodes: usize,
    max_delay: usize,
    // row-major (from, to), each of length max_delay + 1
    probabilities: Vec<Vec<f64>>,
    schedule: Option<DelaySchedule>,
    coupling: Option<DelayCoupling>,
}

impl fmt::Debug for DelayModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DelayModel")
            .field("nodes", &self.nodes)
            .field("max_delay", &self.max_delay)
            .field("probabilities", &self.probabilities)
            .field("scheduled", &self.schedule.is_some())
            .field("coupled", &self.coupling.is_some())
            .finish()
    }
}

fn check_distribution(p: &[f64], max_delay: usize, from: usize, to: usize) -> Result<()> {
    let err = |reason: String| GraphError::DelayDistribution { from, to, reason };
    if p.len() != max_delay + 1 {
        return Err(err(format!("expected {} entries, got {}", max_delay + 1, p.len())));
    }
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(err("entries must be finite and nonnegative".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROBABILITY_TOL {
        return Err(err(format!("entries sum to {total}, not 1")));
    }
    if from == to && p[0] != 1.0 {
        return Err(err("self-delay must be zero with probability one".into()));
    }
    Ok(())
}

impl DelayModel {
    /// No delays at all (`d = 0`).
    pub fn delay_free(nodes: usize) -> Self {
        Self {
            nodes,
            max_delay: 0,
            probabilities: vec![vec![1.0]; nodes * nodes],
            schedule: None,
            coupling: None,
        }
    }

    /// Every off-diagonal link uses the same distribution `p` over `{0..d}`.
    pub fn homogeneous(nodes: usize, p: Vec<f64>) -> Result<Self> {
        let max_delay = p.len().saturating_sub(1);
        let mut self_delay = vec![0.0; max_delay + 1];
        self_delay[0] = 1.0;
        let probabilities = (0..nodes * nodes)
            .map(|idx| {
                if idx / nodes == idx % nodes {
                    self_delay.clone()
                } else {
                    p.clone()
                }
            })
            .collect();
        Self::from_link_probabilities(nodes, max_delay, probabilities)
    }

    /// Uniform distribution on `{0..d}` for every off-diagonal link.
    pub fn uniform(nodes: usize, max_delay: usize) -> Self {
        let p = vec![1.0 / (max_delay + 1) as f64; max_delay + 1];
        Self::homogeneous(nodes, p).expect("uniform delay distribution is valid")
    }

    /// Full table indexed row-major by `(from, to)`.
    pub fn from_link_probabilities(
        nodes: usize,
        max_delay: usize,
        probabilities: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if probabilities.len() != nodes * nodes {
            return Err(GraphError::Dimension(format!(
                "expected {} link distributions, got {}",
                nodes * nodes,
                probabilities.len()
            )));
        }
        for (idx, p) in probabilities.iter().enumerate() {
            check_distribution(p, max_delay, idx / nodes, idx % nodes)?;
        }
        Ok(Self {
            nodes,
            max_delay,
            probabilities,
            schedule: None,
            coupling: None,
        })
    }

    /// Installs a time-varying schedule `p_{ji,q}(k)`; its outputs are
    /// validated at sampling time.
    pub fn with_schedule(mut self, schedule: DelaySchedule) -> Self {
        self.schedule = Some(schedule);
        self
    }

    /// Installs a coupled sampler used instead of independent link draws.
    pub fn with_coupling(mut self, coupling: DelayCoupling) -> Self {
        self.coupling = Some(coupling);
        self
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn max_delay(&self) -> usize {
        self.max_delay
    }

    pub fn is_delay_free(&self) -> bool {
        self.max_delay == 0
    }

    pub fn coupling(&self) -> Option<&DelayCoupling> {
        self.coupling.as_ref()
    }

    /// Distribution of `λ_{from,to}(k)`.
    pub fn probabilities(&self, k: usize, from: usize, to: usize) -> Result<Vec<f64>> {
        match &self.schedule {
            Some(schedule) => {
                let p = schedule(k, from, to);
                check_distribution(&p, self.max_delay, from, to)?;
                Ok(p)
            }
            None => Ok(self.probabilities[from * self.nodes + to].clone()),
        }
    }

    /// Time-invariant table entry, ignoring any schedule.
    pub fn base_probabilities(&self, from: usize, to: usize) -> &[f64] {
        &self.probabilities[from * self.nodes + to]
    }
}

/// Realized delays `λ_ji(k)` for one time step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayRealization {
    nodes: usize,
    max_delay: usize,
    lags: Vec<usize>,
}

impl DelayRealization {
    /// `lags` is row-major in `(from, to)`.
    pub fn new(nodes: usize, max_delay: usize, lags: Vec<usize>) -> Result<Self> {
        if lags.len() != nodes * nodes {
            return Err(GraphError::Dimension(format!(
                "expected {} delay entries, got {}",
                nodes * nodes,
                lags.len()
            )));
        }
        for (idx, &lag) in lags.iter().enumerate() {
            let (from, to) = (idx / nodes, idx % nodes);
            if lag > max_delay || (from == to && lag != 0) {
                return Err(GraphError::DelayEntry {
                    from,
                    to,
                    lag,
                    max_delay,
                });
            }
        }
        Ok(Self {
            nodes,
            max_delay,
            lags,
        })
    }

    pub fn from_rows(rows: &[Vec<usize>], max_delay: usize) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(GraphError::Dimension("ragged delay rows".into()));
        }
        Self::new(n, max_delay, rows.concat())
    }

    pub fn zero(nodes: usize, max_delay: usize) -> Self {
        Self {
            nodes,
            max_delay,
            lags: vec![0; nodes * nodes],
        }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn max_delay(&self) -> usize {
        self.max_delay
    }

    /// Delay on the link `from -> to`.
    pub fn lag(&self, from: usize, to: usize) -> usize {
        self.lags[from * self.nodes + to]
    }

    pub fn is_zero(&self) -> bool {
        self.lags.iter().all(|&l| l == 0)
    }

    /// The `d+1` delay matrices; entry `(j,i)` of matrix `q` flags `λ_ji = q`.
    pub fn delay_matrices(&self) -> Vec<DMatrix<u8>> {
        (0..=self.max_delay)
            .map(|q| {
                DMatrix::from_fn(self.nodes, self.nodes, |j, i| u8::from(self.lag(j, i) == q))
            })
            .collect()
    }
}

/// `(A ∘ iq) ⊗ I_n`.
pub fn masked_adjacency(g: &WeightedDigraph, iq: &DMatrix<u8>, n: usize) -> Result<Matrix> {
    let nodes = g.node_count();
    if iq.shape() != (nodes, nodes) {
        return Err(GraphError::Dimension(format!(
            "mask is {}x{}, graph has {nodes} nodes",
            iq.nrows(),
            iq.ncols()
        )));
    }
    if let Some(bad) = iq.iter().find(|&&v| v > 1) {
        return Err(GraphError::Dimension(format!("mask entry {bad} is not 0/1")));
    }
    let masked = Matrix::from_fn(nodes, nodes, |i, j| {
        if iq[(i, j)] == 1 {
            g.weight(i, j)
        } else {
            0.0
        }
    });
    Ok(kron_identity(&masked, n))
}

/// The matrices `Ā(k,q)`, q = 0..d, that pair weight `a_ij` with the delay
/// `λ_ji` of the same link, so that `Σ_q Ā(k,q) x(k-q)` reproduces the
/// per-node delayed reads. Delay matrices are indexed `(from, to)` while the
/// adjacency is indexed `(to, from)`, hence the transpose.
pub fn delayed_adjacency_blocks(
    g: &WeightedDigraph,
    delays: &DelayRealization,
    n: usize,
) -> Result<Vec<Matrix>> {
    if delays.nodes() != g.node_count() {
        return Err(GraphError::Dimension(format!(
            "delays cover {} nodes, graph has {}",
            delays.nodes(),
            g.node_count()
        )));
    }
    delays
        .delay_matrices()
        .iter()
        .map(|iq| masked_adjacency(g, &iq.transpose(), n))
        .collect()
}
