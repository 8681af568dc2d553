//! Equivalent delay-free system.
//!
//! The delayed error recursion is rewritten as `r(k+1) = F(k) r(k) + g(k)`
//! with `g(k) = Σ_{q=1}^d C_q(k) g(k-q) + a(k)𝓗ᵀ(k)v(k)`. The matrices are
//! produced step by step from the realized graphs, delays and gains:
//!
//! ```text
//! G(k)   = b D⊗I + a 𝓗ᵀ𝓗 - b Σ_{q=0}^d Ā(k,q) Φ_F(k-1,k-q)⁻¹
//! F(k)   = I - G(k)
//! C_i(k) = -b Σ_{q=i}^d Ā(k,q) Φ_F(k-i,k-q)⁻¹,   1 <= i <= d
//! ```
//!
//! with `F(j) = I` for `-d <= j <= -1`. Each step re-verifies the triangular
//! defining relations of `F` and `C_q` as a self-check.

use std::collections::VecDeque;

use log::debug;
use thiserror::Error;

use crate::graph::{delayed_adjacency_blocks, DelayRealization, GraphError, WeightedDigraph};
use crate::linalg::{kron_identity, singular_range, spectral_norm, Matrix, Vector};
use crate::processes::ObservationSet;

/// Max-norm tolerance (relative to the magnitude of the terms) on the
/// defining relations.
pub const RELATION_TOL: f64 = 1e-10;

/// Slack added to `(1-κ)^{-1}` by the invertibility certificate.
pub const CERTIFICATE_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuxiliaryError {
    #[error("F({k}) is singular (‖I - F‖ = {g_norm})")]
    Singular { k: usize, g_norm: f64 },
    #[error("defining relations violated at k={k}: residual {residual:e}")]
    RelationViolated { k: usize, residual: f64 },
    #[error("matrix chain index out of range: {0}")]
    OutOfRange(String),
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T> = std::result::Result<T, AuxiliaryError>;

/// `Φ_Z(j,i) = Z(j)⋯Z(i)` for `j >= i`, identity otherwise. `seq[t]` holds
/// `Z(first + t)`.
pub fn phi_product(seq: &[Matrix], first: i64, j: i64, i: i64) -> Result<Matrix> {
    let dim = seq
        .first()
        .map(|m| m.nrows())
        .ok_or_else(|| AuxiliaryError::OutOfRange("empty sequence".into()))?;
    if j < i {
        return Ok(Matrix::identity(dim, dim));
    }
    let last = first + seq.len() as i64 - 1;
    if i < first || j > last {
        return Err(AuxiliaryError::OutOfRange(format!(
            "requested Z({j})…Z({i}), stored Z({first})…Z({last})"
        )));
    }
    let mut out = seq[(j - first) as usize].clone();
    for t in (i..j).rev() {
        out = out * &seq[(t - first) as usize];
    }
    Ok(out)
}

/// Per-step quantities recorded when tracing is enabled.
#[derive(Debug, Clone, Default)]
pub struct AuxTrace {
    /// `F(j)`, j = 0, 1, …
    pub f: Vec<Matrix>,
    /// `C_1(j)…C_d(j)`.
    pub c: Vec<Vec<Matrix>>,
}

/// Diagnostics from one [`AuxiliarySystem::advance`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdvanceReport {
    pub k: usize,
    pub relation_residual: f64,
    pub f_condition: f64,
}

/// Invertibility certificate for the latest `F(k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseCertificate {
    pub invertible: bool,
    pub inv_norm: f64,
    pub bound: f64,
}

impl InverseCertificate {
    pub fn holds(&self) -> bool {
        self.invertible && self.inv_norm <= self.bound + CERTIFICATE_SLACK
    }
}

/// Rolling `F`, `C_q`, `G` for one replicate.
#[derive(Debug, Clone)]
pub struct AuxiliarySystem {
    nodes: usize,
    dim: usize,
    max_delay: usize,
    kappa: f64,
    // front = F(k-1), then F(k-2), …; d+1 entries
    f_hist: VecDeque<Matrix>,
    f_inv_hist: VecDeque<Matrix>,
    c: Vec<Matrix>,
    g: Matrix,
    k: usize,
    trace: Option<AuxTrace>,
}

impl AuxiliarySystem {
    pub fn new(nodes: usize, dim: usize, max_delay: usize, kappa: f64) -> Self {
        let nn = nodes * dim;
        let eye = Matrix::identity(nn, nn);
        Self {
            nodes,
            dim,
            max_delay,
            kappa,
            f_hist: VecDeque::from(vec![eye.clone(); max_delay + 1]),
            f_inv_hist: VecDeque::from(vec![eye; max_delay + 1]),
            c: vec![Matrix::zeros(nn, nn); max_delay],
            g: Matrix::zeros(nn, nn),
            k: 0,
            trace: None,
        }
    }

    /// Records every `F(k)` and `C_q(k)` for [`g_residual`].
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(AuxTrace::default());
        self
    }

    pub fn trace(&self) -> Option<&AuxTrace> {
        self.trace.as_ref()
    }

    pub fn max_delay(&self) -> usize {
        self.max_delay
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Number of completed steps; the next [`advance`](Self::advance) builds `F(step)`.
    pub fn step(&self) -> usize {
        self.k
    }

    /// Latest `F`, i.e. `F(step-1)` (identity before the first step).
    pub fn latest_f(&self) -> &Matrix {
        &self.f_hist[0]
    }

    pub fn latest_f_inverse(&self) -> &Matrix {
        &self.f_inv_hist[0]
    }

    /// `F(step-1-t)`.
    pub fn f_lagged(&self, t: usize) -> Option<&Matrix> {
        self.f_hist.get(t)
    }

    pub fn c(&self) -> &[Matrix] {
        &self.c
    }

    pub fn g(&self) -> &Matrix {
        &self.g
    }

    /// `Φ_F(k-i, k-q)⁻¹` for the upcoming step `k`, q = 0..=d.
    fn inverse_chain_from(&self, i: usize) -> Vec<Matrix> {
        let nn = self.nodes * self.dim;
        let mut chain = Vec::with_capacity(self.max_delay + 1);
        let mut acc = Matrix::identity(nn, nn);
        for q in 0..=self.max_delay {
            if q >= i {
                // F(k-q)⁻¹ · Φ_F(k-i, k-q+1)⁻¹
                acc = &self.f_inv_hist[q - 1] * acc;
            }
            chain.push(acc.clone());
        }
        chain
    }

    /// `Φ_F(k-1, k-q)⁻¹`, q = 0..=d, for the upcoming step `k`.
    pub fn phi_inverse_chain(&self) -> Vec<Matrix> {
        let mut chain = self.inverse_chain_from(1);
        // q = 0 is the empty product.
        if let Some(first) = chain.first_mut() {
            first.fill_with_identity();
        }
        chain
    }

    /// Builds `C_q(k)`, `G(k)` and `F(k)` for the next step.
    pub fn advance(
        &mut self,
        graph: &WeightedDigraph,
        delays: &DelayRealization,
        observations: &ObservationSet,
        innovation_gain: f64,
        consensus_gain: f64,
    ) -> Result<AdvanceReport> {
        let n = self.dim;
        let nn = self.nodes * n;
        if graph.node_count() != self.nodes || observations.dim() != n || delays.max_delay() > self.max_delay {
            return Err(AuxiliaryError::Shape(
                "graph, observations or delays do not match the auxiliary system".into(),
            ));
        }
        let d = self.max_delay;
        let mut blocks = delayed_adjacency_blocks(graph, delays, n)?;
        blocks.resize(d + 1, Matrix::zeros(nn, nn));
        let (a, b) = (innovation_gain, consensus_gain);
        let k = self.k;

        let local = kron_identity(&graph.degree_matrix(), n) * b + observations.gram() * a;
        let chain_one = self.phi_inverse_chain();

        let mut c = Vec::with_capacity(d);
        for i in 1..=d {
            let chain = self.inverse_chain_from(i);
            let mut ci = Matrix::zeros(nn, nn);
            for q in i..=d {
                ci -= &blocks[q] * &chain[q] * b;
            }
            c.push(ci);
        }
        let mut g = local.clone();
        for q in 0..=d {
            g -= &blocks[q] * &chain_one[q] * b;
        }
        let f = Matrix::identity(nn, nn) - &g;

        // F(k) + C_1 = I - bD⊗I - a𝓗ᵀ𝓗 + bĀ(k,0)
        let mut residual = 0.0_f64;
        let mut scale = 1.0_f64;
        {
            let lhs = if d >= 1 { &f + &c[0] } else { f.clone() };
            let rhs = Matrix::identity(nn, nn) - &local + &blocks[0] * b;
            residual = residual.max((lhs - &rhs).amax());
            scale = scale.max(rhs.amax());
        }
        for i in 1..=d {
            // C_i F(k-i) - C_{i+1} = -bĀ(k,i), with C_{d+1} = 0
            let mut lhs = &c[i - 1] * &self.f_hist[i - 1];
            if i < d {
                lhs -= &c[i];
            }
            let rhs = &blocks[i] * -b;
            scale = scale.max(lhs.amax()).max(c[i - 1].amax());
            residual = residual.max((lhs - rhs).amax());
        }
        if residual > RELATION_TOL * scale {
            return Err(AuxiliaryError::RelationViolated { k, residual });
        }

        let f_inv = f.clone().lu().try_inverse().ok_or(AuxiliaryError::Singular {
            k,
            g_norm: spectral_norm(&g),
        })?;
        let (smin, smax) = singular_range(&f);
        if !(smin > f64::EPSILON * smax.max(1.0)) || !f_inv.iter().all(|v| v.is_finite()) {
            return Err(AuxiliaryError::Singular {
                k,
                g_norm: spectral_norm(&g),
            });
        }
        let f_condition = smax / smin;
        debug!("aux step {k}: cond(F) = {f_condition:.3e}, relation residual = {residual:.3e}");

        if let Some(trace) = self.trace.as_mut() {
            trace.f.push(f.clone());
            trace.c.push(c.clone());
        }
        self.f_hist.pop_back();
        self.f_hist.push_front(f);
        self.f_inv_hist.pop_back();
        self.f_inv_hist.push_front(f_inv);
        self.c = c;
        self.g = g;
        self.k += 1;
        Ok(AdvanceReport {
            k,
            relation_residual: residual,
            f_condition,
        })
    }

    /// Certifies `‖F⁻¹(k)‖ <= (1-κ)^{-1}` for the latest `F`.
    pub fn certify_inverse(&self) -> InverseCertificate {
        certify_inverse_bound(self.latest_f(), self.kappa)
    }
}

/// `‖F⁻¹‖₂` via singular values, against `(1-κ)^{-1}`.
pub fn certify_inverse_bound(f: &Matrix, kappa: f64) -> InverseCertificate {
    let (smin, smax) = singular_range(f);
    let invertible = smin > f64::EPSILON * smax.max(1.0);
    InverseCertificate {
        invertible,
        inv_norm: if invertible { 1.0 / smin } else { f64::INFINITY },
        bound: 1.0 / (1.0 - kappa),
    }
}

/// `‖g(k) - Σ_{q=1}^d C_q(k) g(k-q) - w(k)‖` with `g(j) := e(j+1) - F(j)e(j)`.
///
/// `errors[j] = e(j)`, `forcing[j] = a(j)𝓗ᵀ(j)v(j)`; `trace` must come from the
/// same run.
pub fn g_residual(errors: &[Vector], forcing: &[Vector], trace: &AuxTrace, k: usize) -> Result<f64> {
    let d = trace.c.first().map_or(0, Vec::len);
    if k < d {
        return Err(AuxiliaryError::InsufficientHistory(format!(
            "k = {k} is below the maximum delay {d}"
        )));
    }
    if errors.len() < k + 2 || forcing.len() <= k || trace.f.len() <= k || trace.c.len() <= k {
        return Err(AuxiliaryError::InsufficientHistory(format!(
            "need e(0..={}), w(0..={k}) and F/C through {k}",
            k + 1
        )));
    }
    let g = |j: usize| &errors[j + 1] - &trace.f[j] * &errors[j];
    let mut r = g(k) - &forcing[k];
    for (q, cq) in trace.c[k].iter().enumerate() {
        r -= cq * g(k - q - 1);
    }
    Ok(r.norm())
}
