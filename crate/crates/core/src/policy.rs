//! Context-aware GNN policy over the filter agents.
//!
//! Each tap `h_k` is an agent. A single graph-convolution layer turns the
//! expanded graph and padded signal into a context vector for the incoming
//! node; every agent concatenates its tap with that context, one round of
//! message passing runs over the agent graph, and a shared head emits the
//! mean of a Gaussian tap change per agent.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{gaussian_log_density, Gradients, Tape, Tensor, Var};
use crate::error::{check_dim, Error, Result};
use crate::filter::{FilterTaps, PaddedSignal};
use crate::graph::{spectral_radius, AdjacencyMatrix};

pub const CONTEXT_WIDTH: usize = 32;
pub const MLP_WIDTHS: [usize; 3] = [32, 64, 32];
pub const INITIAL_SPREAD: f64 = 0.05;

/// Dense layer `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: uniform(inputs, outputs, inputs, rng),
            bias: uniform(1, outputs, inputs, rng),
        }
    }
}

/// ReLU between layers, identity after the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    fn init<R: Rng + ?Sized>(inputs: usize, widths: &[usize], rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = inputs;
        for &w in widths {
            layers.push(Linear::init(fan_in, w, rng));
            fan_in = w;
        }
        Self { layers }
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(|l| l.weight.cols()).unwrap_or(0)
    }
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::new(rows, cols, data).expect("sized")
}

/// Communication graph between the K+1 agents.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentGraph {
    agents: usize,
    edges: Vec<(usize, usize)>,
}

impl AgentGraph {
    /// Every agent talks to every other agent.
    pub fn complete(agents: usize) -> Self {
        let mut edges = Vec::new();
        for i in 0..agents {
            for j in i + 1..agents {
                edges.push((i, j));
            }
        }
        Self { agents, edges }
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn is_connected(&self) -> bool {
        if self.agents == 0 {
            return true;
        }
        let mut seen = vec![false; self.agents];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &(a, b) in &self.edges {
                let other = if a == v {
                    b
                } else if b == v {
                    a
                } else {
                    continue;
                };
                if !seen[other] {
                    seen[other] = true;
                    stack.push(other);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Row-normalized neighbor matrix: row k averages over k's neighbors.
    pub fn mean_aggregator(&self) -> Tensor {
        let n = self.agents;
        let mut m = Tensor::zeros(n, n);
        let mut deg = vec![0usize; n];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        let data = m.data_mut();
        for &(a, b) in &self.edges {
            data[a * n + b] = 1.0 / deg[a] as f64;
            data[b * n + a] = 1.0 / deg[b] as f64;
        }
        m
    }
}

/// All trainable weights of the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    /// Weight on the node's own padded value (`W_0`).
    pub context_self: Tensor,
    /// Weight on the normalized-shift aggregate (`W_1`).
    pub context_neighbor: Tensor,
    pub aggregate: Mlp,
    pub update: Mlp,
    pub action_head: Tensor,
    /// Per-agent log standard deviation of the tap change.
    pub log_spread: Tensor,
    pub agent_graph: AgentGraph,
    /// Fixed (untrained) per-agent multiplier on the head output. Tap changes
    /// accumulate over the horizon, so a small factor keeps one update of
    /// the head from moving the taps far.
    pub mean_scale: Vec<f64>,
}

impl PolicyParameters {
    /// Fresh parameters for a filter of the given order. The action head
    /// starts at zero so the initial policy leaves the taps in place.
    pub fn init<R: Rng + ?Sized>(order: usize, rng: &mut R) -> Self {
        let agents = order + 1;
        let z = 1 + CONTEXT_WIDTH;
        let context_self = uniform(1, CONTEXT_WIDTH, 1, rng);
        let context_neighbor = uniform(1, CONTEXT_WIDTH, 1, rng);
        let aggregate = Mlp::init(z, &MLP_WIDTHS, rng);
        let update = Mlp::init(z + aggregate.output_width(), &MLP_WIDTHS, rng);
        let action_head = Tensor::zeros(update.output_width(), 1);
        let log_spread = Tensor::filled(agents, 1, libm::log(INITIAL_SPREAD));
        Self {
            context_self,
            context_neighbor,
            aggregate,
            update,
            action_head,
            log_spread,
            agent_graph: AgentGraph::complete(agents),
            mean_scale: vec![1.0; agents],
        }
    }

    pub fn with_mean_scale(mut self, scale: f64) -> Self {
        self.mean_scale.iter_mut().for_each(|s| *s = scale);
        self
    }

    /// Divides agent `k`'s mean multiplier and spread by `feature_scale[k]`
    /// so that actions move the prediction by comparable amounts whatever
    /// the magnitude of the shift features. Nonpositive scales are ignored.
    pub fn with_feature_scales(mut self, feature_scale: &[f64]) -> Result<Self> {
        check_dim("feature scales", self.agents(), feature_scale.len())?;
        for (k, &f) in feature_scale.iter().enumerate() {
            if f > 0.0 && f.is_finite() {
                self.mean_scale[k] /= f;
                self.log_spread.data_mut()[k] -= libm::log(f);
            }
        }
        Ok(self)
    }

    /// Resets every agent's action standard deviation to `spread`.
    pub fn with_initial_spread(mut self, spread: f64) -> Self {
        self.log_spread = Tensor::filled(self.agents(), 1, libm::log(spread));
        self
    }

    pub fn agents(&self) -> usize {
        self.log_spread.rows()
    }

    pub fn order(&self) -> usize {
        self.agents() - 1
    }

    /// Tensors in canonical order with their names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            (String::from("context_self"), &self.context_self),
            (String::from("context_neighbor"), &self.context_neighbor),
        ];
        for (prefix, mlp) in [("aggregate", &self.aggregate), ("update", &self.update)] {
            for (i, layer) in mlp.layers.iter().enumerate() {
                out.push((format!("{prefix}.{i}.weight"), &layer.weight));
                out.push((format!("{prefix}.{i}.bias"), &layer.bias));
            }
        }
        out.push((String::from("action_head"), &self.action_head));
        out.push((String::from("log_spread"), &self.log_spread));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.context_self, &mut self.context_neighbor];
        for mlp in [&mut self.aggregate, &mut self.update] {
            for layer in mlp.layers.iter_mut() {
                out.push(&mut layer.weight);
                out.push(&mut layer.bias);
            }
        }
        out.push(&mut self.action_head);
        out.push(&mut self.log_spread);
        out
    }

    /// Number of scalar parameters; independent of the graph size.
    pub fn len(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for (_, t) in self.named_tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("flat parameters", self.len(), flat.len())?;
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, t)| t.data().iter().all(|v| v.is_finite()))
    }
}

/// What the context layer sees of the incoming node: its own padded value
/// (always 0) and its row of the spectrally normalized shift `S x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContextInput {
    pub own: f64,
    pub neighbor: f64,
}

impl ContextInput {
    pub fn from_graph(adj: &AdjacencyMatrix, padded: &PaddedSignal) -> Result<Self> {
        check_dim("padded signal", adj.n(), padded.len())?;
        let rho = spectral_radius(adj);
        Self::with_radius(adj, padded, rho)
    }

    pub fn with_radius(adj: &AdjacencyMatrix, padded: &PaddedSignal, rho: f64) -> Result<Self> {
        check_dim("padded signal", adj.n(), padded.len())?;
        let last = adj.n() - 1;
        let x = padded.values();
        let raw: f64 = adj.neighbors(last).iter().map(|&(j, w)| w * x[j]).sum();
        Ok(Self {
            own: x[last],
            neighbor: if rho > 0.0 { raw / rho } else { 0.0 },
        })
    }
}

/// Incoming-node row of `ReLU(x W_0 + S x W_1)`.
pub fn context_features(
    adj: &AdjacencyMatrix,
    padded: &PaddedSignal,
    params: &PolicyParameters,
) -> Result<Vec<f64>> {
    let input = ContextInput::from_graph(adj, padded)?;
    Ok(context_row(input, params))
}

pub fn context_row(input: ContextInput, params: &PolicyParameters) -> Vec<f64> {
    params
        .context_self
        .data()
        .iter()
        .zip(params.context_neighbor.data())
        .map(|(ws, wn)| (input.own * ws + input.neighbor * wn).max(0.0))
        .collect()
}

/// Sampled tap change plus its joint log-density.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub action: Vec<f64>,
    pub log_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    /// Draw from the Gaussian.
    Sample,
    /// Return the mean; `log_prob` is the density at the mean.
    Mean,
}

/// Parameter leaves registered on a tape, in canonical order.
pub struct ParamVars {
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, params: &PolicyParameters) -> Self {
        let vars = params
            .named_tensors()
            .into_iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect();
        Self { vars }
    }

    /// Gradients flattened in the canonical order (zeros where unused).
    pub fn flat_gradient(&self, tape: &Tape, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        for &v in &self.vars {
            match grads.get(v) {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(core::iter::repeat_n(0.0, tape.value(v).len())),
            }
        }
        out
    }

    fn context_self(&self) -> Var {
        self.vars[0]
    }
    fn context_neighbor(&self) -> Var {
        self.vars[1]
    }
    fn mlp_layer(&self, params: &PolicyParameters, which: usize, layer: usize) -> (Var, Var) {
        let base = 2 + if which == 0 {
            0
        } else {
            2 * params.aggregate.layers.len()
        };
        (self.vars[base + 2 * layer], self.vars[base + 2 * layer + 1])
    }
    fn action_head(&self) -> Var {
        self.vars[self.vars.len() - 2]
    }
    pub fn log_spread(&self) -> Var {
        self.vars[self.vars.len() - 1]
    }
}

fn mlp_forward(
    tape: &mut Tape,
    pv: &ParamVars,
    params: &PolicyParameters,
    which: usize,
    input: Var,
) -> Result<Var> {
    let layers = if which == 0 {
        params.aggregate.layers.len()
    } else {
        params.update.layers.len()
    };
    let mut h = input;
    for layer in 0..layers {
        let (w, b) = pv.mlp_layer(params, which, layer);
        let xw = tape.matmul(h, w)?;
        h = tape.add_row(xw, b)?;
        if layer + 1 < layers {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

/// Records the policy on `tape` and returns the per-agent action means.
pub fn record_means(
    tape: &mut Tape,
    pv: &ParamVars,
    params: &PolicyParameters,
    taps: &FilterTaps,
    input: ContextInput,
) -> Result<Var> {
    let agents = params.agents();
    check_dim("taps vs agents", agents, taps.as_slice().len())?;

    let own = tape.constant(Tensor::scalar(input.own));
    let neighbor = tape.constant(Tensor::scalar(input.neighbor));
    let own_part = tape.matmul(own, pv.context_self())?;
    let neighbor_part = tape.matmul(neighbor, pv.context_neighbor())?;
    let pre = tape.add(own_part, neighbor_part)?;
    let context = tape.relu(pre);

    let ones = tape.constant(Tensor::filled(agents, 1, 1.0));
    let broadcast = tape.matmul(ones, context)?;
    let tap_col = tape.constant(Tensor::column(taps.as_slice()));
    let z = tape.concat_cols(&[tap_col, broadcast])?;

    let messages = mlp_forward(tape, pv, params, 0, z)?;
    let mixer = tape.constant(params.agent_graph.mean_aggregator());
    let aggregated = tape.matmul(mixer, messages)?;
    let joined = tape.concat_cols(&[z, aggregated])?;
    let embedding = mlp_forward(tape, pv, params, 1, joined)?;
    let head = tape.matmul(embedding, pv.action_head())?;
    Ok(if params.mean_scale.iter().all(|&s| s == 1.0) {
        head
    } else {
        let scale = tape.constant(Tensor::column(&params.mean_scale));
        tape.mul(head, scale)?
    })
}

/// One policy decision from a precomputed context input.
///
/// With `with_score` the flat gradient of the log-probability of the
/// returned action with respect to all parameters is also returned.
pub fn act<R: Rng + ?Sized>(
    params: &PolicyParameters,
    taps: &FilterTaps,
    input: ContextInput,
    mode: ActionMode,
    rng: &mut R,
    with_score: bool,
) -> Result<(ActionSample, Option<Vec<f64>>)> {
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let means = record_means(&mut tape, &pv, params, taps, input)?;
    let mean_values = tape.value(means).data().to_vec();
    let log_std = params.log_spread.data();
    let action: Vec<f64> = match mode {
        ActionMode::Mean => mean_values.clone(),
        ActionMode::Sample => mean_values
            .iter()
            .zip(log_std)
            .map(|(&m, &l)| {
                let eps: f64 = StandardNormal.sample(rng);
                m + libm::exp(l) * eps
            })
            .collect(),
    };
    if action.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(String::from("policy action")));
    }
    let sampled = tape.constant(Tensor::column(&action));
    let lp = tape.gaussian_log_prob(sampled, means, pv.log_spread())?;
    let log_prob = tape.value(lp).item();
    let score = if with_score {
        let grads = tape.backward(lp)?;
        Some(pv.flat_gradient(&tape, &grads))
    } else {
        None
    };
    Ok((ActionSample { action, log_prob }, score))
}

/// Policy decision on the expanded graph `adj` with padded signal.
pub fn policy_forward<R: Rng + ?Sized>(
    taps: &FilterTaps,
    adj: &AdjacencyMatrix,
    padded: &PaddedSignal,
    params: &PolicyParameters,
    mode: ActionMode,
    rng: &mut R,
) -> Result<ActionSample> {
    let input = ContextInput::from_graph(adj, padded)?;
    Ok(act(params, taps, input, mode, rng, false)?.0)
}

/// Action means without sampling.
pub fn action_means(params: &PolicyParameters, taps: &FilterTaps, input: ContextInput) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let means = record_means(&mut tape, &pv, params, taps, input)?;
    Ok(tape.value(means).data().to_vec())
}

/// Log-density of a given action (used by tests and diagnostics).
pub fn log_prob_of(
    params: &PolicyParameters,
    taps: &FilterTaps,
    input: ContextInput,
    action: &[f64],
) -> Result<f64> {
    let means = action_means(params, taps, input)?;
    check_dim("action length", means.len(), action.len())?;
    Ok(gaussian_log_density(action, &means, params.log_spread.data()))
}

/// `h_t = h_{t-1} + c_t`.
pub fn apply_action(taps: &FilterTaps, action: &[f64]) -> Result<FilterTaps> {
    check_dim("action length", taps.as_slice().len(), action.len())?;
    FilterTaps::new(
        taps.as_slice()
            .iter()
            .zip(action)
            .map(|(h, c)| h + c)
            .collect(),
    )
}

const CHECKPOINT_MAGIC: &str = "gmarl-policy";
const CHECKPOINT_VERSION: u32 = 2;

/// Trained policy plus the taps the filter starts from.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParameters,
    pub initial_taps: FilterTaps,
}

impl Checkpoint {
    /// Text serialization. Floats use the shortest round-trip
    /// representation, so save -> load -> save is byte-identical.
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
        let _ = writeln!(out, "order {}", p.order());
        let _ = writeln!(out, "agent-edges {}", join_edges(p.agent_graph.edges()));
        let _ = writeln!(
            out,
            "mlp-widths {} {}",
            join_widths(&p.aggregate),
            join_widths(&p.update)
        );
        let _ = writeln!(out, "taps {}", join(self.initial_taps.as_slice()));
        let _ = writeln!(out, "mean-scale {}", join(&p.mean_scale));
        for (name, t) in p.named_tensors() {
            let _ = writeln!(out, "tensor {name} {} {}", t.rows(), t.cols());
            let _ = writeln!(out, "{}", join(t.data()));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Parse(format!("checkpoint truncated before {what}")))
        };
        let header = next("header")?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(CHECKPOINT_MAGIC) {
            return Err(Error::Parse(String::from("not a policy checkpoint")));
        }
        let version: u32 = parse_num(parts.next().unwrap_or(""))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
        }
        let order: usize = parse_num(field(next("order")?, "order")?)?;
        let edges_line = field(next("agent-edges")?, "agent-edges")?;
        let mut edges = Vec::new();
        for e in edges_line.split_whitespace() {
            let (a, b) = e
                .split_once('-')
                .ok_or_else(|| Error::Parse(format!("bad agent edge {e}")))?;
            edges.push((parse_num(a)?, parse_num(b)?));
        }
        let widths_line = field(next("mlp-widths")?, "mlp-widths")?;
        let mut widths = widths_line.split_whitespace();
        let aggregate_widths = parse_list::<usize>(widths.next().unwrap_or(""), ',')?;
        let update_widths = parse_list::<usize>(widths.next().unwrap_or(""), ',')?;
        let taps = FilterTaps::new(parse_list(field(next("taps")?, "taps")?, ' ')?)?;
        let mean_scale: Vec<f64> = parse_list(field(next("mean-scale")?, "mean-scale")?, ' ')?;

        // Build a skeleton with the recorded shapes, then overwrite tensors.
        let agents = order + 1;
        check_dim("mean-scale entries", agents, mean_scale.len())?;
        let mut params = PolicyParameters {
            context_self: Tensor::zeros(1, CONTEXT_WIDTH),
            context_neighbor: Tensor::zeros(1, CONTEXT_WIDTH),
            aggregate: skeleton(1 + CONTEXT_WIDTH, &aggregate_widths),
            update: skeleton(
                1 + CONTEXT_WIDTH + aggregate_widths.last().copied().unwrap_or(0),
                &update_widths,
            ),
            action_head: Tensor::zeros(update_widths.last().copied().unwrap_or(0), 1),
            log_spread: Tensor::zeros(agents, 1),
            agent_graph: AgentGraph { agents, edges },
            mean_scale,
        };
        let names: Vec<(String, [usize; 2])> = params
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape()))
            .collect();
        let mut flat = Vec::new();
        for (name, shape) in names {
            let head = next("tensor header")?;
            let mut h = head.split_whitespace();
            if h.next() != Some("tensor") || h.next() != Some(name.as_str()) {
                return Err(Error::Parse(format!("expected tensor {name}, found `{head}`")));
            }
            let rows: usize = parse_num(h.next().unwrap_or(""))?;
            let cols: usize = parse_num(h.next().unwrap_or(""))?;
            if [rows, cols] != shape {
                return Err(Error::Parse(format!(
                    "tensor {name} has shape {rows}x{cols}, expected {}x{}",
                    shape[0], shape[1]
                )));
            }
            let values: Vec<f64> = parse_list(next("tensor values")?, ' ')?;
            check_dim("tensor values", rows * cols, values.len())?;
            flat.extend(values);
        }
        params.set_flat(&flat)?;
        Ok(Self {
            params,
            initial_taps: taps,
        })
    }
}

fn skeleton(inputs: usize, widths: &[usize]) -> Mlp {
    let mut layers = Vec::new();
    let mut fan_in = inputs;
    for &w in widths {
        layers.push(Linear {
            weight: Tensor::zeros(fan_in, w),
            bias: Tensor::zeros(1, w),
        });
        fan_in = w;
    }
    Mlp { layers }
}

fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .map(str::trim)
        .ok_or_else(|| Error::Parse(format!("expected `{key}` line, found `{line}`")))
}

fn parse_num<T: core::str::FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad number `{s}`")))
}

fn parse_list<T: core::str::FromStr>(s: &str, sep: char) -> Result<Vec<T>> {
    s.split(sep)
        .filter(|p| !p.trim().is_empty())
        .map(parse_num)
        .collect()
}

fn join(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v:?}");
    }
    s
}

fn join_widths(mlp: &Mlp) -> String {
    let mut s = String::new();
    for (i, l) in mlp.layers.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{}", l.weight.cols());
    }
    s
}

fn join_edges(edges: &[(usize, usize)]) -> String {
    let mut s = String::new();
    for (i, (a, b)) in edges.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{a}-{b}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{expand_adjacency, AttachmentVector};
    use crate::rng::stream;

    fn params(order: usize, seed: u64) -> PolicyParameters {
        let mut p = PolicyParameters::init(order, &mut stream(seed, 3));
        // non-zero head so means depend on the inputs
        let head: Vec<f64> = (0..p.action_head.len()).map(|i| 0.05 * ((i % 7) as f64 - 3.0)).collect();
        p.action_head.data_mut().copy_from_slice(&head);
        p
    }

    #[test]
    fn zero_signal_gives_zero_context() {
        let adj = AdjacencyMatrix::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let padded = PaddedSignal::from_previous(&[0.0, 0.0]);
        let c = context_features(&adj, &padded, &params(3, 1)).unwrap();
        assert_eq!(c.len(), CONTEXT_WIDTH);
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn isolated_incoming_node_without_self_weight() {
        let base = AdjacencyMatrix::from_edges(2, &[(0, 1, 1.0)]).unwrap();
        let adj = expand_adjacency(&base, &AttachmentVector::zeros(2)).unwrap();
        let padded = PaddedSignal::from_previous(&[1.5, -0.3]);
        let mut p = params(3, 2);
        p.context_self = Tensor::zeros(1, CONTEXT_WIDTH);
        let c = context_features(&adj, &padded, &p).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mean_mode_is_repeatable() {
        let p = params(3, 3);
        let taps = FilterTaps::new(vec![0.0, 0.3, -0.1, 0.02]).unwrap();
        let input = ContextInput { own: 0.0, neighbor: 0.7 };
        let (a, _) = act(&p, &taps, input, ActionMode::Mean, &mut stream(1, 2), false).unwrap();
        let (b, _) = act(&p, &taps, input, ActionMode::Mean, &mut stream(9, 2), false).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.action, action_means(&p, &taps, input).unwrap());
    }

    #[test]
    fn identical_taps_give_identical_means() {
        let p = params(3, 4);
        let taps = FilterTaps::new(vec![0.2, 0.2, -0.4, 0.9]).unwrap();
        let means = action_means(&p, &taps, ContextInput { own: 0.0, neighbor: -1.1 }).unwrap();
        assert_eq!(means[0], means[1]);
        assert_ne!(means[1], means[2]);
    }

    #[test]
    fn log_prob_matches_density_oracle() {
        let p = params(3, 5);
        let taps = FilterTaps::new(vec![0.0, 0.5, 0.0, 0.1]).unwrap();
        let input = ContextInput { own: 0.0, neighbor: 0.4 };
        let mut rng = stream(11, 2);
        for _ in 0..20 {
            let (s, _) = act(&p, &taps, input, ActionMode::Sample, &mut rng, false).unwrap();
            let means = action_means(&p, &taps, input).unwrap();
            let mut density = 1.0;
            for ((x, m), l) in s.action.iter().zip(&means).zip(p.log_spread.data()) {
                let sd = libm::exp(*l);
                let z = (x - m) / sd;
                density *= libm::exp(-0.5 * z * z) / (sd * libm::sqrt(2.0 * core::f64::consts::PI));
            }
            let rel = (libm::exp(s.log_prob) - density).abs() / density;
            assert!(rel < 1e-10, "relative error {rel}");
        }
    }

    #[test]
    fn parameter_count_is_size_independent() {
        let p = params(3, 6);
        let before = p.len();
        let mut rng = stream(1, 2);
        for n in [2usize, 5, 40] {
            let edges: Vec<(usize, usize, f64)> = (1..n).map(|i| (i - 1, i, 1.0)).collect();
            let adj = AdjacencyMatrix::from_edges(n, &edges).unwrap();
            let padded = PaddedSignal::from_previous(&vec![0.5; n - 1]);
            let taps = FilterTaps::zeros(3);
            policy_forward(&taps, &adj, &padded, &p, ActionMode::Sample, &mut rng).unwrap();
        }
        assert_eq!(p.len(), before);
    }

    #[test]
    fn apply_action_examples() {
        let h = FilterTaps::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(apply_action(&h, &[0.0; 4]).unwrap(), h);
        let c = [0.3, -0.2, 0.1, 5.0];
        assert_eq!(apply_action(&FilterTaps::zeros(3), &c).unwrap().as_slice(), &c);
        assert!(apply_action(&h, &[0.0; 3]).is_err());
    }

    #[test]
    fn agent_graph_complete_and_connected() {
        let g = AgentGraph::complete(4);
        assert_eq!(g.edges().len(), 6);
        assert!(g.is_connected());
        let m = g.mean_aggregator();
        for r in 0..4 {
            let row: f64 = (0..4).map(|c| m.get(r, c)).sum();
            assert!((row - 1.0).abs() < 1e-15);
            assert_eq!(m.get(r, r), 0.0);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let ck = Checkpoint {
            params: params(3, 7).with_mean_scale(0.01).with_feature_scales(&[0.0, 0.7, 2.1, 10.4]).unwrap(),
            initial_taps: FilterTaps::new(vec![0.0, 0.31, -0.0123, 1e-7]).unwrap(),
        };
        let text = ck.to_text();
        let back = Checkpoint::from_text(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(Checkpoint::from_text("nope").is_err());
        let ck = Checkpoint {
            params: params(2, 8),
            initial_taps: FilterTaps::zeros(2),
        };
        let text = ck.to_text();
        let truncated: String = text.lines().take(8).collect::<Vec<_>>().join("\n");
        assert!(Checkpoint::from_text(&truncated).is_err());
    }

    #[test]
    fn feature_scales_divide_means_and_spreads() {
        let taps = FilterTaps::new(vec![0.0, 0.3, -0.1, 0.02]).unwrap();
        let input = ContextInput { own: 0.0, neighbor: 0.8 };
        let base = params(3, 9);
        let scaled = base.clone().with_feature_scales(&[0.0, 2.0, 4.0, -1.0]).unwrap();
        let (m0, m1) = (action_means(&base, &taps, input).unwrap(), action_means(&scaled, &taps, input).unwrap());
        for (k, d) in [1.0, 2.0, 4.0, 1.0].iter().enumerate() {
            assert!((m1[k] - m0[k] / d).abs() < 1e-15);
            let spread = libm::exp(scaled.log_spread.data()[k]);
            assert!((spread - INITIAL_SPREAD / d).abs() < 1e-15);
        }
        assert!(base.with_feature_scales(&[1.0]).is_err());
    }
}
