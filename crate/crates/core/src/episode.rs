//! Episode realizations.
//!
//! The expansion never depends on the filter, so a run is simulated once
//! into a [`Trajectory`] and every method (policy or baseline) is scored on
//! the same realization. Each step keeps only what the predictors consume:
//! the shift features `a^T A^(k-1) x`, the context input and the truth.

use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::filter::shift_features;
use crate::graph::{
    AdjacencyMatrix, AttachmentSpec, AttachmentVector, Environment, ExpandingGraphState,
    SignalDynamics, SignalModel,
};
use crate::policy::ContextInput;
use crate::rng::{stream, streams};

/// Initial conditions plus the stochastic model of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub state: ExpandingGraphState,
    pub attachment: AttachmentSpec,
    pub signal: SignalModel,
}

/// Produces an episode for a seed.
pub trait EpisodeSource {
    fn episode(&self, seed: u64) -> Result<Episode>;

    /// Longest horizon the source can serve, if bounded.
    fn max_horizon(&self) -> Option<usize> {
        None
    }
}

impl<S: EpisodeSource + ?Sized> EpisodeSource for &S {
    fn episode(&self, seed: u64) -> Result<Episode> {
        (**self).episode(seed)
    }
    fn max_horizon(&self) -> Option<usize> {
        (**self).max_horizon()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttachmentRule {
    Uniform,
    Preferential,
}

/// Random expansion: ring of `initial_nodes` with a standard normal signal,
/// `edges_per_node` binary edges per arrival, shift-plus-noise signal growth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSource {
    pub initial_nodes: usize,
    pub rule: AttachmentRule,
    pub edges_per_node: usize,
    pub dynamics: SignalDynamics,
}

impl Default for SyntheticSource {
    fn default() -> Self {
        Self {
            initial_nodes: 5,
            rule: AttachmentRule::Uniform,
            edges_per_node: 2,
            dynamics: SignalDynamics::default(),
        }
    }
}

/// Cycle on `n` nodes (a single edge for `n = 2`, empty below).
pub fn ring(n: usize) -> AdjacencyMatrix {
    let mut adj = AdjacencyMatrix::zeros(n);
    if n >= 2 {
        for i in 0..n {
            let j = (i + 1) % n;
            if i != j {
                adj.set_edge(i, j, 1.0).expect("in range");
            }
        }
    }
    adj
}

impl EpisodeSource for SyntheticSource {
    fn episode(&self, seed: u64) -> Result<Episode> {
        if self.initial_nodes == 0 {
            return Err(Error::InvalidConfig("initial graph needs at least one node".into()));
        }
        let mut rng = stream(seed, streams::INITIAL);
        let signal: Vec<f64> = (0..self.initial_nodes)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let edges = self.edges_per_node;
        let attachment = match self.rule {
            AttachmentRule::Uniform => AttachmentSpec::UniformRandom { edges },
            AttachmentRule::Preferential => AttachmentSpec::Preferential { edges },
        };
        Ok(Episode {
            state: ExpandingGraphState::new(ring(self.initial_nodes), signal)?,
            attachment,
            signal: SignalModel::Shift(self.dynamics),
        })
    }
}

/// What every predictor needs at step t.
#[derive(Debug, Clone, PartialEq)]
pub struct StepObservation {
    /// `[0, a^T x, a^T A x, ..., a^T A^(K-1) x]` on the graph before expansion.
    pub features: Vec<f64>,
    pub context: ContextInput,
    pub ground_truth: f64,
}

/// Full per-step record for dumps.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub attachment: AttachmentVector,
    /// Signal after the step (length N_t).
    pub signal: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial: ExpandingGraphState,
    pub steps: Vec<StepObservation>,
    /// Present when simulated with `keep_records`.
    pub records: Vec<StepRecord>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn truths(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.ground_truth).collect()
    }
}

/// Runs the expansion for `horizon` steps with the environment stream of
/// `seed`, recording order-`order` features.
pub fn simulate(
    episode: &Episode,
    horizon: usize,
    order: usize,
    seed: u64,
    keep_records: bool,
) -> Result<Trajectory> {
    let mut env = Environment::new(
        episode.state.clone(),
        episode.attachment.clone(),
        episode.signal.clone(),
        stream(seed, streams::ENVIRONMENT),
    );
    let mut steps = Vec::with_capacity(horizon);
    let mut records = Vec::new();
    for _ in 0..horizon {
        let a = env.sample_attachment()?;
        let state = env.state();
        let features = shift_features(&state.adj, &a, &state.signal, order)?;
        let raw = a.dot(&state.signal)?;
        let kept = keep_records.then(|| a.clone());
        let transition = env.commit(a)?;
        let rho = transition.spectral_radius;
        steps.push(StepObservation {
            features,
            context: ContextInput {
                own: 0.0,
                neighbor: if rho > 0.0 { raw / rho } else { 0.0 },
            },
            ground_truth: transition.ground_truth,
        });
        if let Some(attachment) = kept {
            records.push(StepRecord {
                attachment,
                signal: env.state().signal.clone(),
            });
        }
    }
    Ok(Trajectory {
        initial: episode.state.clone(),
        steps,
        records,
    })
}

/// Builds and simulates the episode for `seed`.
pub fn realize<S: EpisodeSource + ?Sized>(
    source: &S,
    horizon: usize,
    order: usize,
    seed: u64,
) -> Result<Trajectory> {
    if let Some(max) = source.max_horizon() {
        if horizon > max {
            return Err(Error::InvalidConfig(alloc::format!(
                "horizon {horizon} exceeds the {max} arrivals this source can replay"
            )));
        }
    }
    simulate(&source.episode(seed)?, horizon, order, seed, false)
}
