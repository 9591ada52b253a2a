//! The expanding graph: topology, signal, attachment sampling and the
//! stochastic transition from one graph size to the next.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};

use crate::error::{check_dim, Error, Result};
use crate::rng::Stream;

/// Floor added to every degree before preferential sampling so that
/// isolated nodes stay reachable.
pub const DEGREE_FLOOR: f64 = 1e-6;

pub const POWER_ITERATIONS: usize = 100;
pub const POWER_TOLERANCE: f64 = 1e-9;

/// Symmetric nonnegative weighted adjacency with zero diagonal.
///
/// Stored as per-node neighbor lists sorted by index; the dense view is
/// available through [`AdjacencyMatrix::get`] and [`AdjacencyMatrix::to_dense`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdjacencyMatrix {
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl AdjacencyMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            neighbors: vec![Vec::new(); n],
        }
    }

    /// Builds from a dense square matrix, validating the invariants.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut adj = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            check_dim("adjacency row", n, row.len())?;
            for (j, &w) in row.iter().enumerate() {
                if !(w >= 0.0) || !w.is_finite() {
                    return Err(Error::InvalidConfig(alloc::format!(
                        "adjacency entry ({i},{j}) = {w} is not a finite nonnegative weight"
                    )));
                }
                if i == j && w != 0.0 {
                    return Err(Error::InvalidConfig(alloc::format!(
                        "adjacency diagonal entry ({i},{i}) must be zero"
                    )));
                }
                if w != rows[j][i] {
                    return Err(Error::InvalidConfig(alloc::format!(
                        "adjacency is not symmetric at ({i},{j})"
                    )));
                }
                if w != 0.0 {
                    adj.neighbors[i].push((j, w));
                }
            }
        }
        Ok(adj)
    }

    /// Builds from an undirected edge list. Repeated edges overwrite.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut adj = Self::zeros(n);
        for &(i, j, w) in edges {
            adj.set_edge(i, j, w)?;
        }
        Ok(adj)
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    /// Sets the undirected edge weight between `i` and `j` (0 removes it).
    pub fn set_edge(&mut self, i: usize, j: usize, w: f64) -> Result<()> {
        let n = self.n();
        if i >= n || j >= n {
            return Err(Error::DimensionMismatch {
                what: "edge endpoint",
                expected: n,
                found: i.max(j),
            });
        }
        if i == j || !(w >= 0.0) || !w.is_finite() {
            return Err(Error::InvalidConfig(alloc::format!(
                "invalid edge ({i},{j}) with weight {w}"
            )));
        }
        Self::upsert(&mut self.neighbors[i], j, w);
        Self::upsert(&mut self.neighbors[j], i, w);
        Ok(())
    }

    fn upsert(list: &mut Vec<(usize, f64)>, j: usize, w: f64) {
        match list.binary_search_by_key(&j, |&(k, _)| k) {
            Ok(pos) if w == 0.0 => {
                list.remove(pos);
            }
            Ok(pos) => list[pos].1 = w,
            Err(_) if w == 0.0 => {}
            Err(pos) => list.insert(pos, (j, w)),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self.neighbors[i].binary_search_by_key(&j, |&(k, _)| k) {
            Ok(pos) => self.neighbors[i][pos].1,
            Err(_) => 0.0,
        }
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut out = vec![vec![0.0; n]; n];
        for (i, list) in self.neighbors.iter().enumerate() {
            for &(j, w) in list {
                out[i][j] = w;
            }
        }
        out
    }

    /// `out = A x`.
    pub fn shift_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim("shift input", self.n(), x.len())?;
        check_dim("shift output", self.n(), out.len())?;
        for (o, list) in out.iter_mut().zip(&self.neighbors) {
            *o = list.iter().map(|&(j, w)| w * x[j]).sum();
        }
        Ok(())
    }

    pub fn shift(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n()];
        self.shift_into(x, &mut out)?;
        Ok(out)
    }

    /// Appends a node connected by `a` (Eq. 1 block structure), in place.
    pub fn expand(&mut self, a: &AttachmentVector) -> Result<()> {
        let n = self.n();
        check_dim("attachment vector", n, a.len())?;
        let mut row = Vec::new();
        for (i, w) in a.support() {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidConfig(alloc::format!(
                    "attachment weight {w} at {i} is not finite nonnegative"
                )));
            }
            self.neighbors[i].push((n, w));
            row.push((i, w));
        }
        self.neighbors.push(row);
        Ok(())
    }

    /// Induced subgraph on the given node order; node `order[k]` becomes `k`.
    pub fn induced(&self, order: &[usize]) -> Self {
        let mut position = vec![usize::MAX; self.n()];
        for (k, &v) in order.iter().enumerate() {
            position[v] = k;
        }
        let neighbors = order
            .iter()
            .map(|&v| {
                let mut list: Vec<(usize, f64)> = self.neighbors[v]
                    .iter()
                    .filter(|&&(j, _)| position[j] != usize::MAX)
                    .map(|&(j, w)| (position[j], w))
                    .collect();
                list.sort_by_key(|&(j, _)| j);
                list
            })
            .collect();
        Self { neighbors }
    }

    pub fn max_degree(&self) -> f64 {
        degree_vector(self).into_iter().fold(0.0, f64::max)
    }
}

/// Row sums of the adjacency.
pub fn degree_vector(adj: &AdjacencyMatrix) -> Vec<f64> {
    adj.neighbors
        .iter()
        .map(|list| list.iter().map(|&(_, w)| w).sum())
        .collect()
}

/// Returns the expanded `(n+1) x (n+1)` adjacency with `a` as the last row
/// and column and a zero in the new diagonal slot.
pub fn expand_adjacency(adj: &AdjacencyMatrix, a: &AttachmentVector) -> Result<AdjacencyMatrix> {
    let mut out = adj.clone();
    out.expand(a)?;
    Ok(out)
}

/// Edge weights from an incoming node to each existing node.
#[derive(Debug, Clone, PartialEq)]
pub struct AttachmentVector {
    weights: Vec<f64>,
}

impl AttachmentVector {
    pub fn new(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            weights: vec![0.0; n],
        }
    }

    pub fn from_sparse(n: usize, entries: &[(usize, f64)]) -> Result<Self> {
        let mut weights = vec![0.0; n];
        for &(i, w) in entries {
            if i >= n {
                return Err(Error::DimensionMismatch {
                    what: "attachment index",
                    expected: n,
                    found: i,
                });
            }
            weights[i] = w;
        }
        Ok(Self { weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nonzero entries as `(index, weight)`.
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(i, &w)| (i, w))
    }

    pub fn support_size(&self) -> usize {
        self.support().count()
    }

    /// `a^T x`.
    pub fn dot(&self, x: &[f64]) -> Result<f64> {
        check_dim("attachment dot", self.len(), x.len())?;
        Ok(self.support().map(|(i, w)| w * x[i]).sum())
    }
}

/// Environment state of the decision process: topology, signal and step.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandingGraphState {
    pub adj: AdjacencyMatrix,
    pub signal: Vec<f64>,
    pub step: usize,
}

impl ExpandingGraphState {
    pub fn new(adj: AdjacencyMatrix, signal: Vec<f64>) -> Result<Self> {
        check_dim("signal length", adj.n(), signal.len())?;
        Ok(Self {
            adj,
            signal,
            step: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.adj.n()
    }
}

/// How each incoming node picks its neighbors.
#[derive(Debug, Clone, PartialEq)]
pub enum AttachmentSpec {
    /// `edges` distinct targets, uniformly without replacement, weight 1.
    UniformRandom { edges: usize },
    /// `edges` distinct targets, without replacement, with probability
    /// proportional to `degree + DEGREE_FLOOR`, weight 1.
    Preferential { edges: usize },
    /// Stored attachment vectors, indexed by the state's step counter.
    Replay(Vec<AttachmentVector>),
}

/// Draws the attachment of the next incoming node.
pub fn sample_attachment<R: Rng + ?Sized>(
    state: &ExpandingGraphState,
    spec: &AttachmentSpec,
    rng: &mut R,
) -> Result<AttachmentVector> {
    let n = state.n();
    match spec {
        AttachmentSpec::UniformRandom { edges } => {
            check_edges(*edges, n)?;
            let mut a = AttachmentVector::zeros(n);
            for i in rand::seq::index::sample(rng, n, *edges) {
                a.weights[i] = 1.0;
            }
            Ok(a)
        }
        AttachmentSpec::Preferential { edges } => {
            check_edges(*edges, n)?;
            let mut weights: Vec<f64> = degree_vector(&state.adj)
                .into_iter()
                .map(|d| d + DEGREE_FLOOR)
                .collect();
            let mut dist = WeightedIndex::new(&weights)
                .map_err(|e| Error::InvalidConfig(alloc::format!("degree weights: {e}")))?;
            let mut a = AttachmentVector::zeros(n);
            for draw in 0..*edges {
                let i = dist.sample(rng);
                a.weights[i] = 1.0;
                weights[i] = 0.0;
                if draw + 1 < *edges {
                    dist.update_weights(&[(i, &0.0)])
                        .map_err(|e| Error::InvalidConfig(alloc::format!("degree weights: {e}")))?;
                }
            }
            Ok(a)
        }
        AttachmentSpec::Replay(vectors) => {
            let a = vectors.get(state.step).ok_or(Error::ReplayExhausted {
                step: state.step,
                available: vectors.len(),
            })?;
            check_dim("replayed attachment", n, a.len())?;
            Ok(a.clone())
        }
    }
}

fn check_edges(edges: usize, nodes: usize) -> Result<()> {
    if edges == 0 {
        return Err(Error::InvalidConfig("edges_per_node must be at least 1".into()));
    }
    if edges > nodes {
        return Err(Error::TooManyEdges { edges, nodes });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftNormalization {
    SpectralRadius,
    MaxDegree,
}

/// Synthetic signal growth: one normalized shift of the zero-padded signal
/// plus i.i.d. Gaussian noise on every node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalDynamics {
    pub noise_variance: f64,
    pub shift_normalization: ShiftNormalization,
}

impl Default for SignalDynamics {
    fn default() -> Self {
        Self {
            noise_variance: 0.25,
            shift_normalization: ShiftNormalization::SpectralRadius,
        }
    }
}

/// Where the signal after each expansion comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalModel {
    Shift(SignalDynamics),
    /// Existing values are kept and the incoming node reveals `values[step]`
    /// (observed data such as ratings or case counts).
    Appended(Vec<f64>),
    /// Full signal after each step, as recorded in a trajectory dump.
    Recorded(Vec<Vec<f64>>),
}

/// Spectral radius by shifted power iteration, optionally warm-started.
///
/// Iterates on `A + cI` with `c = max_degree / 2`, which keeps the Perron
/// eigenvalue dominant on bipartite graphs.
#[derive(Debug, Clone, Default)]
pub struct SpectralEstimator {
    vector: Vec<f64>,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl SpectralEstimator {
    pub fn new() -> Self {
        Self {
            vector: Vec::new(),
            max_iterations: POWER_ITERATIONS,
            tolerance: POWER_TOLERANCE,
        }
    }

    pub fn estimate(&mut self, adj: &AdjacencyMatrix) -> f64 {
        let n = adj.n();
        if adj.edge_count() == 0 {
            self.vector.clear();
            return 0.0;
        }
        let fill = if self.vector.is_empty() {
            1.0
        } else {
            self.vector.iter().sum::<f64>() / self.vector.len() as f64
        };
        self.vector.truncate(n);
        self.vector.resize(n, fill.max(1e-3));
        normalize(&mut self.vector);

        let shift = 0.5 * adj.max_degree();
        let mut next = vec![0.0; n];
        let mut lambda = f64::NAN;
        for _ in 0..self.max_iterations {
            adj.shift_into(&self.vector, &mut next).expect("sized above");
            let rayleigh: f64 = next.iter().zip(&self.vector).map(|(a, b)| a * b).sum();
            for (y, x) in next.iter_mut().zip(&self.vector) {
                *y += shift * x;
            }
            normalize(&mut next);
            core::mem::swap(&mut self.vector, &mut next);
            let done = (rayleigh - lambda).abs() <= self.tolerance * rayleigh.abs().max(1.0);
            lambda = rayleigh;
            if done {
                break;
            }
        }
        lambda
    }
}

fn normalize(v: &mut [f64]) {
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Spectral radius with a cold start.
pub fn spectral_radius(adj: &AdjacencyMatrix) -> f64 {
    SpectralEstimator::new().estimate(adj)
}

/// Result of one expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub attachment: AttachmentVector,
    pub ground_truth: f64,
    /// Spectral radius of the expanded adjacency.
    pub spectral_radius: f64,
}

/// Mutable environment that advances one incoming node per step.
///
/// Keeps a warm-started spectral estimate across steps.
#[derive(Debug, Clone)]
pub struct Environment {
    state: ExpandingGraphState,
    attachment: AttachmentSpec,
    signal: SignalModel,
    spectral: SpectralEstimator,
    rng: Stream,
}

impl Environment {
    pub fn new(
        state: ExpandingGraphState,
        attachment: AttachmentSpec,
        signal: SignalModel,
        rng: Stream,
    ) -> Self {
        Self {
            state,
            attachment,
            signal,
            spectral: SpectralEstimator::new(),
            rng,
        }
    }

    pub fn state(&self) -> &ExpandingGraphState {
        &self.state
    }

    pub fn into_state(self) -> ExpandingGraphState {
        self.state
    }

    pub fn sample_attachment(&mut self) -> Result<AttachmentVector> {
        sample_attachment(&self.state, &self.attachment, &mut self.rng)
    }

    /// Expands with `a`, generates the new signal and returns the value
    /// revealed at the incoming node.
    pub fn commit(&mut self, a: AttachmentVector) -> Result<Transition> {
        let step = self.state.step;
        self.state.adj.expand(&a)?;
        let rho = self.spectral.estimate(&self.state.adj);
        let n = self.state.adj.n();
        let signal = match &self.signal {
            SignalModel::Shift(dynamics) => {
                let mut padded = core::mem::take(&mut self.state.signal);
                padded.push(0.0);
                let scale = match dynamics.shift_normalization {
                    ShiftNormalization::SpectralRadius => rho,
                    ShiftNormalization::MaxDegree => self.state.adj.max_degree(),
                };
                let mut next = self.state.adj.shift(&padded)?;
                if scale > 0.0 {
                    next.iter_mut().for_each(|v| *v /= scale);
                }
                if dynamics.noise_variance > 0.0 {
                    let noise = Normal::new(0.0, libm::sqrt(dynamics.noise_variance))
                        .map_err(|e| Error::InvalidConfig(alloc::format!("noise: {e}")))?;
                    for v in next.iter_mut() {
                        *v += noise.sample(&mut self.rng);
                    }
                } else if dynamics.noise_variance < 0.0 {
                    return Err(Error::InvalidConfig("noise_variance must be >= 0".into()));
                }
                next
            }
            SignalModel::Appended(values) => {
                let v = *values.get(step).ok_or(Error::ReplayExhausted {
                    step,
                    available: values.len(),
                })?;
                let mut next = core::mem::take(&mut self.state.signal);
                next.push(v);
                next
            }
            SignalModel::Recorded(signals) => {
                let next = signals.get(step).ok_or(Error::ReplayExhausted {
                    step,
                    available: signals.len(),
                })?;
                check_dim("recorded signal", n, next.len())?;
                next.clone()
            }
        };
        let ground_truth = signal[n - 1];
        self.state.signal = signal;
        self.state.step += 1;
        Ok(Transition {
            attachment: a,
            ground_truth,
            spectral_radius: rho,
        })
    }

    pub fn step(&mut self) -> Result<Transition> {
        let a = self.sample_attachment()?;
        self.commit(a)
    }
}

/// One transition of the kernel `P_e`, as a pure function of the inputs.
pub fn env_step(
    state: &ExpandingGraphState,
    spec: &AttachmentSpec,
    signal: &SignalModel,
    rng: &mut Stream,
) -> Result<(ExpandingGraphState, AttachmentVector, f64)> {
    let mut env = Environment::new(state.clone(), spec.clone(), signal.clone(), rng.clone());
    let transition = env.step()?;
    *rng = env.rng;
    Ok((env.state, transition.attachment, transition.ground_truth))
}
