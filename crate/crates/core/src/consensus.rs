//! Fusion of local estimates by consensus.
//!
//! Every algorithm runs synchronously on a [`FusionGraph`] over the `N`
//! estimating nodes; `𝒩_i` always contains `i` itself. Updates are row
//! stochastic, so each step replaces a node's value with a convex combination
//! of its closed neighbourhood. Sums run over `𝒩_i` in ascending index order,
//! which makes every trajectory bit-reproducible.
//!
//! The variance-weighted ("wise") iteration carries a presumed error variance
//! `s_i` next to each value `x_i` and updates both:
//!
//! ```text
//! x(t+1) = P(t) x(t),   P_ij = s_j⁻¹ / Σ_{k∈𝒩_i} s_k⁻¹
//! s(t+1) = M(t) s(t),   M_ij = s_j⁻² / Σ_{k∈𝒩_i} s_k⁻²
//! ```

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::HexNetwork;

/// Smallest admissible quality value.
pub const S_MIN: f64 = 1e-12;
/// Non-finite qualities are replaced by this multiple of the largest finite one.
pub const S_CAP_FACTOR: f64 = 1e6;
/// Row-sum tolerance for stochastic matrices.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("neighbourhood of node {0} does not contain the node itself")]
    MissingSelf(usize),
    #[error("neighbour index {0} out of range")]
    NodeOutOfRange(usize),
    #[error("neighbourhoods are not symmetric between {0} and {1}")]
    NotSymmetric(usize, usize),
    #[error("graph is disconnected")]
    Disconnected,
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("row {0} of the weight matrix is not stochastic")]
    NotStochastic(usize),
    #[error("weight ({0}, {1}) links nodes that are not neighbours")]
    SparsityViolation(usize, usize),
    #[error("every variance is infinite; no node carries weight")]
    AllWeightsZero,
    #[error("variance {0} is not positive")]
    InvalidVariance(f64),
}

/// Closed neighbourhoods of the estimating nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionGraph {
    neighborhoods: Vec<Vec<usize>>,
}

impl FusionGraph {
    /// Validates self-membership, symmetry and connectivity.
    pub fn new(mut neighborhoods: Vec<Vec<usize>>) -> Result<Self, FusionError> {
        let n = neighborhoods.len();
        if n == 0 {
            return Err(FusionError::EmptyGraph);
        }
        for nb in neighborhoods.iter_mut() {
            nb.sort_unstable();
            nb.dedup();
        }
        for (i, nb) in neighborhoods.iter().enumerate() {
            if let Some(&j) = nb.iter().find(|&&j| j >= n) {
                return Err(FusionError::NodeOutOfRange(j));
            }
            if nb.binary_search(&i).is_err() {
                return Err(FusionError::MissingSelf(i));
            }
            for &j in nb {
                if neighborhoods[j].binary_search(&i).is_err() {
                    return Err(FusionError::NotSymmetric(i, j));
                }
            }
        }
        let graph = FusionGraph { neighborhoods };
        if !graph.is_connected() {
            return Err(FusionError::Disconnected);
        }
        Ok(graph)
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, FusionError> {
        let mut nb: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(FusionError::NodeOutOfRange(a.max(b)));
            }
            nb[a].push(b);
            nb[b].push(a);
        }
        Self::new(nb)
    }

    /// Graph over the inner nodes of a network. Returns the graph and the
    /// network index of each fusion node.
    pub fn from_network(net: &HexNetwork) -> Result<(Self, Vec<usize>), FusionError> {
        let inner = net.inner().to_vec();
        let mut nb = Vec::with_capacity(inner.len());
        for (k, &i) in inner.iter().enumerate() {
            let mut row = vec![k];
            for &j in net.neighbors(i) {
                if let Ok(pos) = inner.binary_search(&j) {
                    row.push(pos);
                }
            }
            nb.push(row);
        }
        Ok((Self::new(nb)?, inner))
    }

    pub fn cycle(n: usize) -> Result<Self, FusionError> {
        let edges: Vec<(usize, usize)> = (0..n)
            .map(|i| (i, (i + 1) % n))
            .filter(|(a, b)| a != b)
            .collect();
        Self::from_edges(n, &edges)
    }

    pub fn complete(n: usize) -> Result<Self, FusionError> {
        Self::new((0..n).map(|_| (0..n).collect()).collect())
    }

    pub fn len(&self) -> usize {
        self.neighborhoods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighborhoods.is_empty()
    }

    /// `𝒩_i`, ascending, including `i`.
    pub fn neighborhood(&self, i: usize) -> &[usize] {
        &self.neighborhoods[i]
    }

    fn is_connected(&self) -> bool {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &w in &self.neighborhoods[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    fn check_len(&self, got: usize) -> Result<(), FusionError> {
        if got != self.len() {
            return Err(FusionError::DimensionMismatch {
                expected: self.len(),
                got,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusOptions {
    /// Absolute tolerance on `max x - min x`.
    pub tol: f64,
    /// Relative tolerance on `(max s - min s) / max s`.
    pub s_rel_tol: f64,
    pub max_iter: usize,
    pub record_trace: bool,
}

impl Default for ConsensusOptions {
    fn default() -> Self {
        ConsensusOptions {
            tol: 1e-9,
            s_rel_tol: 1e-6,
            max_iter: 10_000,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusState {
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: usize,
    pub x: Vec<f64>,
    /// Empty for algorithms without a quality state.
    pub s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    /// Mean of the final `x`; equals every entry once converged.
    pub x_star: f64,
    /// Mean of the final `s`; `None` without a quality state.
    pub s_star: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub trace: Option<Vec<Snapshot>>,
    pub diagnostic: Option<String>,
}

pub fn spread(v: &[f64]) -> f64 {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    hi - lo
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

fn s_agreed(s: &[f64], rel: f64) -> bool {
    let max = s.iter().cloned().fold(0.0f64, f64::max);
    spread(s) <= rel * max
}

struct Recorder {
    trace: Option<Vec<Snapshot>>,
}

impl Recorder {
    fn new(on: bool) -> Self {
        Recorder {
            trace: on.then(Vec::new),
        }
    }

    fn push(&mut self, t: usize, x: &[f64], s: &[f64]) {
        if let Some(tr) = self.trace.as_mut() {
            tr.push(Snapshot {
                t,
                x: x.to_vec(),
                s: s.to_vec(),
            });
        }
    }
}

fn report(
    x: Vec<f64>,
    s: Vec<f64>,
    iterations: usize,
    converged: bool,
    rec: Recorder,
) -> FusionReport {
    FusionReport {
        x_star: mean(&x),
        s_star: (!s.is_empty()).then(|| mean(&s)),
        iterations,
        converged,
        x,
        s,
        trace: rec.trace,
        diagnostic: None,
    }
}

/// `P_ij = 1 / |𝒩_i|`. Doubly stochastic on regular graphs.
pub fn uniform_weights(graph: &FusionGraph) -> DMatrix<f64> {
    let n = graph.len();
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        let nb = graph.neighborhood(i);
        let w = 1.0 / nb.len() as f64;
        for &j in nb {
            p[(i, j)] = w;
        }
    }
    p
}

/// Metropolis-Hastings weights, `P_ij = 1 / (1 + max(d_i, d_j))` off the
/// diagonal. Symmetric, hence doubly stochastic on any graph.
pub fn metropolis_weights(graph: &FusionGraph) -> DMatrix<f64> {
    let n = graph.len();
    let deg = |i: usize| graph.neighborhood(i).len() - 1;
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut off = 0.0;
        for &j in graph.neighborhood(i) {
            if j != i {
                let w = 1.0 / (1 + deg(i).max(deg(j))) as f64;
                p[(i, j)] = w;
                off += w;
            }
        }
        p[(i, i)] = 1.0 - off;
    }
    p
}

/// Checks non-negativity, unit row sums and the graph's sparsity pattern.
pub fn check_stochastic(p: &DMatrix<f64>, graph: &FusionGraph) -> Result<(), FusionError> {
    let n = graph.len();
    if p.nrows() != n || p.ncols() != n {
        return Err(FusionError::DimensionMismatch {
            expected: n,
            got: p.nrows(),
        });
    }
    for i in 0..n {
        let nb = graph.neighborhood(i);
        let mut sum = 0.0;
        for j in 0..n {
            let v = p[(i, j)];
            if !(v >= 0.0 && v.is_finite()) {
                return Err(FusionError::NotStochastic(i));
            }
            if v != 0.0 && nb.binary_search(&j).is_err() {
                return Err(FusionError::SparsityViolation(i, j));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(FusionError::NotStochastic(i));
        }
    }
    Ok(())
}

fn sparse_apply(p: &DMatrix<f64>, graph: &FusionGraph, x: &[f64]) -> Vec<f64> {
    (0..graph.len())
        .map(|i| {
            graph
                .neighborhood(i)
                .iter()
                .map(|&j| p[(i, j)] * x[j])
                .sum()
        })
        .collect()
}

/// Fixed-matrix iteration `x(t+1) = P x(t)`.
pub fn average_consensus(
    graph: &FusionGraph,
    x0: &[f64],
    p: &DMatrix<f64>,
    opts: &ConsensusOptions,
) -> Result<FusionReport, FusionError> {
    graph.check_len(x0.len())?;
    check_stochastic(p, graph)?;
    let mut x = x0.to_vec();
    let mut rec = Recorder::new(opts.record_trace);
    let mut t = 0;
    loop {
        rec.push(t, &x, &[]);
        if spread(&x) <= opts.tol {
            return Ok(report(x, Vec::new(), t, true, rec));
        }
        if t == opts.max_iter {
            return Ok(report(x, Vec::new(), t, false, rec));
        }
        x = sparse_apply(p, graph, &x);
        t += 1;
    }
}

/// Minimum-variance combination `Σ xᵢ/σᵢ² / Σ 1/σᵢ²`. Infinite variances
/// get zero weight.
pub fn optimal_fusion(x0: &[f64], variances: &[f64]) -> Result<f64, FusionError> {
    if x0.len() != variances.len() {
        return Err(FusionError::DimensionMismatch {
            expected: x0.len(),
            got: variances.len(),
        });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (&x, &v) in x0.iter().zip(variances) {
        if !(v > 0.0) {
            return Err(FusionError::InvalidVariance(v));
        }
        if v.is_finite() {
            num += x / v;
            den += 1.0 / v;
        }
    }
    if den == 0.0 {
        return Err(FusionError::AllWeightsZero);
    }
    Ok(num / den)
}

/// Runs Metropolis average consensus on `aᵢ = xᵢ/σᵢ²` and `bᵢ = 1/σᵢ²`; each
/// ratio `aⱼ/bⱼ` tends to the minimum-variance combination. The reported
/// `s` is `1 / (N bⱼ)`, which tends to that combination's variance.
pub fn two_channel_fusion(
    graph: &FusionGraph,
    x0: &[f64],
    variances: &[f64],
    opts: &ConsensusOptions,
) -> Result<FusionReport, FusionError> {
    graph.check_len(x0.len())?;
    optimal_fusion(x0, variances)?;
    let n = graph.len() as f64;
    let p = metropolis_weights(graph);
    let mut a: Vec<f64> = x0
        .iter()
        .zip(variances)
        .map(|(&x, &v)| if v.is_finite() { x / v } else { 0.0 })
        .collect();
    let mut b: Vec<f64> = variances
        .iter()
        .map(|&v| if v.is_finite() { 1.0 / v } else { 0.0 })
        .collect();
    let mut rec = Recorder::new(opts.record_trace);
    let mut t = 0;
    loop {
        let ready = b.iter().all(|&v| v > 0.0);
        let ratio: Vec<f64> = a
            .iter()
            .zip(&b)
            .map(|(&ai, &bi)| if bi > 0.0 { ai / bi } else { f64::NAN })
            .collect();
        let s: Vec<f64> = b.iter().map(|&bi| 1.0 / (n * bi)).collect();
        rec.push(t, &ratio, &s);
        let done = ready && spread(&ratio) <= opts.tol;
        if done || t == opts.max_iter {
            return Ok(report(ratio, s, t, done, rec));
        }
        a = sparse_apply(&p, graph, &a);
        b = sparse_apply(&p, graph, &b);
        t += 1;
    }
}

/// Clamps presumed variances into `[S_MIN, cap]`: tiny or non-positive
/// values become `S_MIN`, non-finite ones `S_CAP_FACTOR × max finite`.
pub fn clamp_qualities(s: &[f64]) -> Result<Vec<f64>, FusionError> {
    let max_finite = s
        .iter()
        .filter(|v| v.is_finite())
        .map(|&v| v.max(S_MIN))
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    let Some(max_finite) = max_finite else {
        return Err(FusionError::AllWeightsZero);
    };
    let cap = S_CAP_FACTOR * max_finite;
    Ok(s.iter()
        .map(|&v| if v.is_finite() { v.max(S_MIN) } else { cap })
        .collect())
}

fn row_weights(graph: &FusionGraph, s: &[f64], i: usize, power: i32) -> Vec<(usize, f64)> {
    let nb = graph.neighborhood(i);
    let inv: Vec<f64> = nb.iter().map(|&j| s[j].powi(-power)).collect();
    let total: f64 = inv.iter().sum();
    nb.iter().zip(inv).map(|(&j, w)| (j, w / total)).collect()
}

fn weighted_step(graph: &FusionGraph, s: &[f64], power: i32, v: &[f64]) -> Vec<f64> {
    (0..graph.len())
        .map(|i| {
            row_weights(graph, s, i, power)
                .into_iter()
                .map(|(j, w)| w * v[j])
                .sum()
        })
        .collect()
}

/// The state-dependent matrices `(P(t), M(t))` for qualities `s`.
pub fn wise_matrices(graph: &FusionGraph, s: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = graph.len();
    let mut p = DMatrix::zeros(n, n);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for (j, w) in row_weights(graph, s, i, 1) {
            p[(i, j)] = w;
        }
        for (j, w) in row_weights(graph, s, i, 2) {
            m[(i, j)] = w;
        }
    }
    (p, m)
}

/// One synchronous update of `x` and `s`. `s` must already be clamped.
pub fn wise_step(state: &ConsensusState, graph: &FusionGraph) -> ConsensusState {
    ConsensusState {
        x: weighted_step(graph, &state.s, 1, &state.x),
        s: weighted_step(graph, &state.s, 2, &state.s),
        t: state.t + 1,
    }
}

/// Iterates [`wise_step`] until both `x` and `s` agree or `max_iter` steps.
pub fn run_wise(
    graph: &FusionGraph,
    x0: &[f64],
    s0: &[f64],
    opts: &ConsensusOptions,
) -> Result<FusionReport, FusionError> {
    variant_hybrid(graph, x0, s0, 0, opts)
}

/// Wise consensus where each outer step first runs `k_bar` quality-only
/// steps, then updates `x` with the refreshed qualities and takes one more
/// quality step. `k_bar = 0` is exactly [`run_wise`].
pub fn variant_hybrid(
    graph: &FusionGraph,
    x0: &[f64],
    s0: &[f64],
    k_bar: usize,
    opts: &ConsensusOptions,
) -> Result<FusionReport, FusionError> {
    graph.check_len(x0.len())?;
    graph.check_len(s0.len())?;
    let mut state = ConsensusState {
        x: x0.to_vec(),
        s: clamp_qualities(s0)?,
        t: 0,
    };
    let mut rec = Recorder::new(opts.record_trace);
    loop {
        rec.push(state.t, &state.x, &state.s);
        let done = spread(&state.x) <= opts.tol && s_agreed(&state.s, opts.s_rel_tol);
        if done || state.t == opts.max_iter {
            let t = state.t;
            return Ok(report(state.x, state.s, t, done, rec));
        }
        for _ in 0..k_bar {
            state.s = weighted_step(graph, &state.s, 2, &state.s);
        }
        state = wise_step(&state, graph);
    }
}

/// Recomputes every node's quality from its current estimate at each step,
/// `sᵢ(t) = variance_fn(i, xᵢ(t))`, and updates `x` with the resulting
/// `P(t)`. Converges on `x` only; the qualities need not agree.
pub fn variant_recompute(
    graph: &FusionGraph,
    x0: &[f64],
    variance_fn: impl FnMut(usize, f64) -> f64,
    opts: &ConsensusOptions,
) -> Result<FusionReport, FusionError> {
    variant_hybrid_recompute(graph, x0, variance_fn, 0, opts)
}

/// Recompute-then-agree hybrid: each step every node computes
/// `sᵢ(t; 0) = variance_fn(i, xᵢ(t))`, runs `k_bar` quality-only consensus
/// steps, then updates `x` with the refined qualities.
pub fn variant_hybrid_recompute(
    graph: &FusionGraph,
    x0: &[f64],
    mut variance_fn: impl FnMut(usize, f64) -> f64,
    k_bar: usize,
    opts: &ConsensusOptions,
) -> Result<FusionReport, FusionError> {
    let mut reports = joint_recompute(
        graph,
        &[x0.to_vec()],
        |i, x: &[f64]| variance_fn(i, x[0]),
        k_bar,
        opts,
    )?;
    Ok(reports.remove(0))
}

/// Multi-channel form of [`variant_hybrid_recompute`]: several channels share
/// one quality per node that may depend on all of the node's current values
/// (`variance_fn(i, &[x_i^(0), x_i^(1), ..])`). Returns one report per
/// channel; they share `s`, iteration count and convergence flag.
pub fn joint_recompute(
    graph: &FusionGraph,
    channels: &[Vec<f64>],
    mut variance_fn: impl FnMut(usize, &[f64]) -> f64,
    k_bar: usize,
    opts: &ConsensusOptions,
) -> Result<Vec<FusionReport>, FusionError> {
    for ch in channels {
        graph.check_len(ch.len())?;
    }
    let n = graph.len();
    let mut xs: Vec<Vec<f64>> = channels.to_vec();
    let mut recs: Vec<Recorder> = channels
        .iter()
        .map(|_| Recorder::new(opts.record_trace))
        .collect();
    let mut t = 0;
    let finish = |xs: Vec<Vec<f64>>,
                  s: Vec<f64>,
                  recs: Vec<Recorder>,
                  t: usize,
                  done: bool,
                  diag: Option<String>| {
        xs.into_iter()
            .zip(recs)
            .map(|(x, rec)| {
                let mut r = report(x, s.clone(), t, done, rec);
                r.diagnostic = diag.clone();
                r
            })
            .collect::<Vec<_>>()
    };
    loop {
        let raw: Vec<f64> = (0..n)
            .map(|i| {
                let vals: Vec<f64> = xs.iter().map(|x| x[i]).collect();
                variance_fn(i, &vals)
            })
            .collect();
        let mut s = match clamp_qualities(&raw) {
            Ok(s) => s,
            Err(e) => {
                return Ok(finish(
                    xs,
                    raw,
                    recs,
                    t,
                    false,
                    Some(format!("step {t}: {e}")),
                ));
            }
        };
        for _ in 0..k_bar {
            s = weighted_step(graph, &s, 2, &s);
        }
        for (x, rec) in xs.iter().zip(recs.iter_mut()) {
            rec.push(t, x, &s);
        }
        let done = xs.iter().all(|x| spread(x) <= opts.tol);
        if done || t == opts.max_iter {
            return Ok(finish(xs, s, recs, t, done, None));
        }
        for x in xs.iter_mut() {
            *x = weighted_step(graph, &s, 1, x);
        }
        t += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> ConsensusOptions {
        ConsensusOptions::default()
    }

    #[test]
    fn graph_validation() {
        assert_eq!(FusionGraph::new(vec![]), Err(FusionError::EmptyGraph));
        assert_eq!(
            FusionGraph::new(vec![vec![1], vec![0, 1]]),
            Err(FusionError::MissingSelf(0))
        );
        assert_eq!(
            FusionGraph::new(vec![vec![0, 1], vec![1]]),
            Err(FusionError::NotSymmetric(0, 1))
        );
        assert_eq!(
            FusionGraph::new(vec![vec![0], vec![1]]),
            Err(FusionError::Disconnected)
        );
        assert_eq!(FusionGraph::cycle(6).unwrap().neighborhood(0), &[0, 1, 5]);
    }

    #[test]
    fn cycle_average_is_mean() {
        let g = FusionGraph::cycle(6).unwrap();
        let x0 = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let r = average_consensus(&g, &x0, &uniform_weights(&g), &opts()).unwrap();
        assert!(r.converged);
        assert!((r.x_star - 3.5).abs() < 1e-9);
    }

    #[test]
    fn singleton_and_constant_inputs() {
        let g = FusionGraph::complete(1).unwrap();
        let r = average_consensus(&g, &[4.2], &uniform_weights(&g), &opts()).unwrap();
        assert_eq!((r.x_star, r.iterations, r.converged), (4.2, 0, true));
        let g = FusionGraph::cycle(5).unwrap();
        let r = average_consensus(&g, &[2.0; 5], &uniform_weights(&g), &opts()).unwrap();
        assert_eq!((r.iterations, r.converged), (0, true));
        let r = run_wise(&FusionGraph::complete(1).unwrap(), &[7.0], &[3.0], &opts()).unwrap();
        assert_eq!(r.x_star, 7.0);
    }

    #[test]
    fn bad_matrices_rejected() {
        let g = FusionGraph::cycle(4).unwrap();
        let mut p = uniform_weights(&g);
        p[(0, 0)] += 0.1;
        assert_eq!(
            average_consensus(&g, &[0.0; 4], &p, &opts()).unwrap_err(),
            FusionError::NotStochastic(0)
        );
        let mut p = uniform_weights(&g);
        p[(0, 1)] -= 0.1;
        p[(0, 2)] = 0.1;
        assert_eq!(
            average_consensus(&g, &[0.0; 4], &p, &opts()).unwrap_err(),
            FusionError::SparsityViolation(0, 2)
        );
    }

    #[test]
    fn metropolis_is_doubly_stochastic() {
        let g = FusionGraph::from_edges(5, &[(0, 1), (1, 2), (1, 3), (3, 4)]).unwrap();
        let p = metropolis_weights(&g);
        check_stochastic(&p, &g).unwrap();
        check_stochastic(&p.transpose(), &g).unwrap();
    }

    #[test]
    fn optimal_fusion_examples() {
        assert!((optimal_fusion(&[0.0, 1.0], &[1.0, 3.0]).unwrap() - 0.25).abs() < 1e-15);
        assert!((optimal_fusion(&[1.0, 2.0, 6.0], &[2.0; 3]).unwrap() - 3.0).abs() < 1e-15);
        assert_eq!(
            optimal_fusion(&[1.0, 100.0], &[1.0, f64::INFINITY]).unwrap(),
            1.0
        );
        assert_eq!(
            optimal_fusion(&[1.0], &[f64::INFINITY]),
            Err(FusionError::AllWeightsZero)
        );
        assert_eq!(
            optimal_fusion(&[1.0], &[0.0]),
            Err(FusionError::InvalidVariance(0.0))
        );
    }

    #[test]
    fn two_channel_matches_closed_form() {
        let g = FusionGraph::cycle(6).unwrap();
        let x0 = [0.3, -1.2, 2.5, 0.9, 1.1, -0.4];
        let v = [0.5, 2.0, 0.1, 3.0, 1.0, 0.7];
        let r = two_channel_fusion(&g, &x0, &v, &opts()).unwrap();
        assert!(r.converged);
        let best = optimal_fusion(&x0, &v).unwrap();
        for xi in &r.x {
            assert!((xi - best).abs() < 1e-8);
        }
        let total: f64 = v.iter().map(|s| 1.0 / s).sum();
        assert!((r.s_star.unwrap() - 1.0 / total).abs() < 1e-8);

        let eq = two_channel_fusion(&g, &x0, &[2.0; 6], &opts()).unwrap();
        assert!((eq.x_star - x0.iter().sum::<f64>() / 6.0).abs() < 1e-8);
    }

    #[test]
    fn two_channel_near_ignores_huge_variance() {
        let g = FusionGraph::cycle(6).unwrap();
        let x0 = [1.0, 1.2, 0.8, 1.1, 0.9, 50.0];
        let v = [1.0, 1.0, 1.0, 1.0, 1.0, 1e8];
        let r = two_channel_fusion(&g, &x0, &v, &opts()).unwrap();
        assert!((r.x_star - optimal_fusion(&x0, &v).unwrap()).abs() < 1e-8);
        assert!((r.x_star - 1.0).abs() < 1e-5);
        let inf = [1.0, 1.0, 1.0, 1.0, 1.0, f64::INFINITY];
        let r = two_channel_fusion(&g, &x0, &inf, &opts()).unwrap();
        assert!((r.x_star - 1.0).abs() < 1e-8);
    }

    #[test]
    fn wise_two_node_hand_example() {
        let g = FusionGraph::complete(2).unwrap();
        let s0 = ConsensusState {
            x: vec![0.0, 1.0],
            s: vec![1.0, 3.0],
            t: 0,
        };
        let (p, m) = wise_matrices(&g, &s0.s);
        assert!((p[(0, 0)] - 0.75).abs() < 1e-15 && (m[(1, 0)] - 0.9).abs() < 1e-15);
        let s1 = wise_step(&s0, &g);
        for i in 0..2 {
            assert!((s1.x[i] - 0.25).abs() < 1e-12);
            assert!((s1.s[i] - 1.2).abs() < 1e-12);
        }
        let r = run_wise(&g, &[0.0, 1.0], &[1.0, 3.0], &opts()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert!((r.x_star - 0.25).abs() < 1e-12 && (r.s_star.unwrap() - 1.2).abs() < 1e-12);
    }

    #[test]
    fn wise_equal_qualities_is_local_averaging() {
        let g = FusionGraph::cycle(6).unwrap();
        let x0 = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let r = run_wise(&g, &x0, &[0.5; 6], &opts()).unwrap();
        assert!(r.converged);
        assert!((r.x_star - 3.5).abs() < 1e-9);
    }

    #[test]
    fn wise_concentrates_on_confident_node() {
        let g = FusionGraph::cycle(6).unwrap();
        let x0 = [2.0, -1.0, 0.5, 3.0, -2.0, 1.0];
        let s0 = [1e-4, 1.0, 1.0, 1.0, 1.0, 1.0];
        let r = run_wise(&g, &x0, &s0, &opts()).unwrap();
        assert!(r.converged);
        assert!((x0[0] - r.x_star).abs() <= 0.01 * spread(&x0));
    }

    #[test]
    fn clamping() {
        let s = clamp_qualities(&[0.0, 2.0, f64::INFINITY, f64::NAN, 1e-20]).unwrap();
        assert_eq!(s, vec![S_MIN, 2.0, 2e6, 2e6, S_MIN]);
        assert_eq!(
            clamp_qualities(&[f64::INFINITY]),
            Err(FusionError::AllWeightsZero)
        );
    }

    #[test]
    fn recompute_with_constant_variance_matches_wise() {
        let g = FusionGraph::cycle(6).unwrap();
        let x0 = [0.1, 0.7, -0.3, 1.5, 0.2, 0.9];
        let o = ConsensusOptions {
            record_trace: true,
            ..opts()
        };
        let a = variant_recompute(&g, &x0, |_, _| 0.3, &o).unwrap();
        let b = run_wise(&g, &x0, &[0.3; 6], &o).unwrap();
        let (ta, tb) = (a.trace.unwrap(), b.trace.unwrap());
        assert_eq!(ta.len(), tb.len());
        for (sa, sb) in ta.iter().zip(&tb) {
            for (u, v) in sa.x.iter().zip(&sb.x) {
                assert!((u - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn recompute_all_infinite_is_reported() {
        let g = FusionGraph::cycle(3).unwrap();
        let r = variant_recompute(&g, &[0.0, 1.0, 2.0], |_, _| f64::INFINITY, &opts()).unwrap();
        assert!(!r.converged);
        assert!(r.diagnostic.unwrap().contains("infinite"));
    }

    #[test]
    fn hybrid_zero_inner_steps_is_wise() {
        let g = FusionGraph::cycle(6).unwrap();
        let x0 = [0.1, 0.7, -0.3, 1.5, 0.2, 0.9];
        let s0 = [0.2, 1.0, 5.0, 0.4, 2.0, 0.9];
        let o = ConsensusOptions {
            record_trace: true,
            ..opts()
        };
        let h = variant_hybrid(&g, &x0, &s0, 0, &o).unwrap();
        let w = run_wise(&g, &x0, &s0, &o).unwrap();
        assert_eq!(h.trace, w.trace);
    }

    #[test]
    fn hybrid_many_inner_steps_equalises_weights() {
        let g = FusionGraph::cycle(6).unwrap();
        let x0 = [0.1, 0.7, -0.3, 1.5, 0.2, 0.9];
        let s0 = [0.2, 1.0, 5.0, 0.4, 2.0, 0.9];
        let o = ConsensusOptions {
            max_iter: 1,
            ..opts()
        };
        let h = variant_hybrid(&g, &x0, &s0, 50, &o).unwrap();
        let uniform = sparse_apply(&uniform_weights(&g), &g, &x0);
        for (a, b) in h.x.iter().zip(&uniform) {
            assert!((a - b).abs() < 1e-6);
        }
        let single = variant_hybrid(
            &FusionGraph::complete(1).unwrap(),
            &[3.0],
            &[1.0],
            7,
            &opts(),
        )
        .unwrap();
        assert_eq!(single.x_star, 3.0);
    }

    #[test]
    fn joint_recompute_shares_quality() {
        let g = FusionGraph::cycle(4).unwrap();
        let chans = vec![vec![0.0, 1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0, 0.0]];
        let r = joint_recompute(
            &g,
            &chans,
            |_, v| 1.0 + v[0] * v[0] + v[1] * v[1],
            2,
            &opts(),
        )
        .unwrap();
        assert_eq!(r.len(), 2);
        assert!(r.iter().all(|x| x.converged));
        assert_eq!(r[0].s, r[1].s);
    }

    #[test]
    fn dimension_checked() {
        let g = FusionGraph::cycle(3).unwrap();
        assert!(matches!(
            run_wise(&g, &[0.0; 2], &[1.0; 3], &opts()),
            Err(FusionError::DimensionMismatch { .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn graph_and_state() -> impl Strategy<Value = (FusionGraph, Vec<f64>, Vec<f64>)> {
            (2usize..10).prop_flat_map(|n| {
                (
                    proptest::collection::vec(any::<u64>(), n - 1),
                    proptest::collection::vec(-5.0f64..5.0, n),
                    proptest::collection::vec(0.01f64..10.0, n),
                )
                    .prop_map(move |(parents, x, s)| {
                        let edges: Vec<(usize, usize)> = parents
                            .iter()
                            .enumerate()
                            .map(|(k, r)| (k + 1, (*r as usize) % (k + 1)))
                            .collect();
                        (FusionGraph::from_edges(n, &edges).unwrap(), x, s)
                    })
            })
        }

        proptest! {
            #[test]
            fn wise_envelopes((g, x, s) in graph_and_state()) {
                let mut st = ConsensusState { x: x.clone(), s: s.clone(), t: 0 };
                let (smin, smax) = (s.iter().cloned().fold(f64::INFINITY, f64::min), s.iter().cloned().fold(0.0, f64::max));
                for _ in 0..30 {
                    let (p, m) = wise_matrices(&g, &st.s);
                    check_stochastic(&p, &g).unwrap();
                    check_stochastic(&m, &g).unwrap();
                    let next = wise_step(&st, &g);
                    let hi = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lo = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
                    prop_assert!(hi(&next.x) <= hi(&st.x) + 1e-12);
                    prop_assert!(lo(&next.x) >= lo(&st.x) - 1e-12);
                    prop_assert!(lo(&next.s) >= smin * (1.0 - 1e-12) && hi(&next.s) <= smax * (1.0 + 1e-12));
                    st = next;
                }
            }
        }
    }
}
