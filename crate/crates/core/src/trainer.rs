//! Rollouts, discounted returns, REINFORCE training and evaluation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::episode::{realize, simulate, Episode, EpisodeSource, Trajectory};
use crate::error::{Error, Result};
use crate::filter::{predict_from_features, prediction_loss, FilterTaps};
use crate::graph::ExpandingGraphState;
use crate::optim::{clip_global_norm, Optimizer, Stepper};
use crate::policy::{act, apply_action, ActionMode, ActionSample, PolicyParameters};
use crate::rng::{derive_seed, stream, streams, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub horizon: usize,
    pub discount: f64,
    pub learning_rate: f64,
    pub episodes_per_epoch: usize,
    pub epochs: usize,
    pub baseline_momentum: f64,
    pub grad_clip: f64,
    pub optimizer: Optimizer,
    pub control_variate: ControlVariate,
    pub filter_order: usize,
    pub seed: u64,
    /// Seeds of the fixed episodes scored with mean actions after every
    /// epoch (the evaluation reward curve). Empty disables it.
    pub eval_seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            horizon: 50,
            discount: 0.95,
            learning_rate: 5e-4,
            episodes_per_epoch: 16,
            epochs: 500,
            baseline_momentum: 0.9,
            grad_clip: 5.0,
            optimizer: Optimizer::Sgd,
            control_variate: ControlVariate::None,
            filter_order: 3,
            seed: 0,
            eval_seeds: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::InvalidConfig(format!(
                "discount {} outside [0, 1]",
                self.discount
            )));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be nonnegative",
                self.learning_rate
            )));
        }
        if self.horizon == 0 || self.episodes_per_epoch == 0 {
            return Err(Error::InvalidConfig(
                "horizon and episodes_per_epoch must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.baseline_momentum) {
            return Err(Error::InvalidConfig("baseline momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One decision step of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub taps_before: FilterTaps,
    pub taps_after: FilterTaps,
    pub action: ActionSample,
    pub prediction: f64,
    pub ground_truth: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub initial_state: ExpandingGraphState,
    pub initial_taps: FilterTaps,
    pub steps: Vec<TraceStep>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }

    pub fn rmse(&self) -> f64 {
        let n = self.steps.len().max(1) as f64;
        libm::sqrt(self.steps.iter().map(|s| s.loss).sum::<f64>() / n)
    }
}

/// Runs the policy over a simulated trajectory. Per-step score gradients
/// (of the log-probability of the taken action) are pushed to `scores`
/// when given.
pub fn rollout_on(
    trajectory: &Trajectory,
    params: &PolicyParameters,
    taps_init: &FilterTaps,
    mode: ActionMode,
    rng: &mut Stream,
    mut scores: Option<&mut Vec<Vec<f64>>>,
) -> Result<EpisodeTrace> {
    let mut taps = taps_init.clone();
    let mut steps = Vec::with_capacity(trajectory.len());
    for obs in &trajectory.steps {
        let (action, score) = act(params, &taps, obs.context, mode, rng, scores.is_some())?;
        let next = apply_action(&taps, &action.action)?;
        let prediction = predict_from_features(&obs.features, &next);
        let loss = prediction_loss(prediction, obs.ground_truth);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss at step {} (taps {:?})",
                steps.len() + 1,
                next.as_slice()
            )));
        }
        if let (Some(out), Some(g)) = (scores.as_deref_mut(), score) {
            out.push(g);
        }
        steps.push(TraceStep {
            taps_before: core::mem::replace(&mut taps, next.clone()),
            taps_after: next,
            action,
            prediction,
            ground_truth: obs.ground_truth,
            loss,
        });
    }
    Ok(EpisodeTrace {
        initial_state: trajectory.initial.clone(),
        initial_taps: taps_init.clone(),
        steps,
    })
}

/// Simulates the episode for `seed` and rolls out the policy with sampled
/// actions. Environment and action randomness use separate streams.
pub fn rollout(
    episode: &Episode,
    params: &PolicyParameters,
    taps_init: &FilterTaps,
    horizon: usize,
    seed: u64,
    mode: ActionMode,
) -> Result<EpisodeTrace> {
    let trajectory = simulate(episode, horizon, taps_init.order(), seed, false)?;
    rollout_on(
        &trajectory,
        params,
        taps_init,
        mode,
        &mut stream(seed, streams::ACTIONS),
        None,
    )
}

/// `-sum_t gamma^(t-1) loss_t`.
pub fn discounted_return(trace: &EpisodeTrace, discount: f64) -> f64 {
    reward_to_go(trace, discount, 1)
}

/// `-sum_{s>=t} gamma^(s-t) loss_s` for 1-based `t`.
pub fn reward_to_go(trace: &EpisodeTrace, discount: f64, t: usize) -> f64 {
    let mut acc = 0.0;
    for step in trace.steps.iter().skip(t.saturating_sub(1)).rev() {
        acc = step.loss + discount * acc;
    }
    -acc
}

/// Reward-to-go for every step of a loss sequence.
pub fn rewards_to_go(losses: &[f64], discount: f64) -> Vec<f64> {
    let mut out = vec![0.0; losses.len()];
    let mut acc = 0.0;
    for (i, l) in losses.iter().enumerate().rev() {
        acc = l + discount * acc;
        out[i] = -acc;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean discounted return over the epoch's sampled episodes.
    pub mean_reward: f64,
    /// Mean per-episode RMSE over the same episodes.
    pub mean_rmse: f64,
    /// Mean discounted return on the fixed evaluation seeds with mean actions.
    pub eval_reward: Option<f64>,
    pub eval_rmse: Option<f64>,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: PolicyParameters,
    pub curve: Vec<EpochStats>,
}

/// Policy-gradient estimate for one batch of episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    /// `sum_t score_t * reward_to_go_t`, summed over episodes.
    pub weighted: Vec<f64>,
    /// `sum_e score_{e,t}` per step, to subtract a per-step baseline.
    pub score_sums: Vec<Vec<f64>>,
    /// Reward-to-go sums per step over episodes.
    pub reward_sums: Vec<f64>,
    pub episodes: usize,
    pub returns: Vec<f64>,
    pub rmses: Vec<f64>,
}

impl GradientEstimate {
    fn new(params: usize, horizon: usize) -> Self {
        Self {
            weighted: vec![0.0; params],
            score_sums: vec![vec![0.0; params]; horizon],
            reward_sums: vec![0.0; horizon],
            episodes: 0,
            returns: Vec::new(),
            rmses: Vec::new(),
        }
    }

    /// Mean over episodes of `sum_t score_t (reward_to_go_t - baseline_t)`.
    pub fn gradient(&self, baseline: &[f64]) -> Vec<f64> {
        let mut g = self.weighted.clone();
        for (sums, &b) in self.score_sums.iter().zip(baseline) {
            for (gi, si) in g.iter_mut().zip(sums) {
                *gi -= b * si;
            }
        }
        let n = self.episodes.max(1) as f64;
        g.iter_mut().for_each(|v| *v /= n);
        g
    }

    pub fn mean_rewards_to_go(&self) -> Vec<f64> {
        let n = self.episodes.max(1) as f64;
        self.reward_sums.iter().map(|r| r / n).collect()
    }
}

/// Extra per-step baseline subtracted from the reward-to-go before the
/// moving-average baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ControlVariate {
    #[default]
    None,
    /// Reward-to-go the episode would have earned from step `t` on had the
    /// taps stayed at `h_{t-1}`. The trajectory is realized before any
    /// action is drawn, so this depends on the state and the exogenous
    /// future only, never on the action at `t`, and the estimator stays
    /// unbiased.
    FrozenTaps,
}

/// `-sum_{j>=t} gamma^(j-t) loss_j` with the taps frozen at `taps`.
pub fn frozen_reward_to_go(trajectory: &Trajectory, taps: &FilterTaps, discount: f64, t: usize) -> f64 {
    let mut acc = 0.0;
    for obs in trajectory.steps[t..].iter().rev() {
        acc = prediction_loss(predict_from_features(&obs.features, taps), obs.ground_truth) + discount * acc;
    }
    -acc
}

/// Samples one episode per seed and accumulates score-function terms.
pub fn estimate_gradient<S: EpisodeSource + ?Sized>(
    source: &S,
    params: &PolicyParameters,
    taps_init: &FilterTaps,
    horizon: usize,
    discount: f64,
    seeds: &[u64],
) -> Result<GradientEstimate> {
    estimate_gradient_with(source, params, taps_init, horizon, discount, seeds, ControlVariate::None)
}

/// [`estimate_gradient`] with a control variate; `reward_sums` then hold
/// the sums of the reward-to-go minus the control.
pub fn estimate_gradient_with<S: EpisodeSource + ?Sized>(
    source: &S,
    params: &PolicyParameters,
    taps_init: &FilterTaps,
    horizon: usize,
    discount: f64,
    seeds: &[u64],
    control: ControlVariate,
) -> Result<GradientEstimate> {
    let mut est = GradientEstimate::new(params.len(), horizon);
    let mut scores = Vec::with_capacity(horizon);
    for &seed in seeds {
        let trajectory = realize(source, horizon, taps_init.order(), seed)?;
        scores.clear();
        let trace = rollout_on(
            &trajectory,
            params,
            taps_init,
            ActionMode::Sample,
            &mut stream(seed, streams::ACTIONS),
            Some(&mut scores),
        )?;
        let rtg = rewards_to_go(&trace.losses(), discount);
        let advantage: Vec<f64> = match control {
            ControlVariate::None => rtg.clone(),
            ControlVariate::FrozenTaps => rtg
                .iter()
                .zip(&trace.steps)
                .enumerate()
                .map(|(t, (r, step))| r - frozen_reward_to_go(&trajectory, &step.taps_before, discount, t))
                .collect(),
        };
        for (t, (score, &r)) in scores.iter().zip(&advantage).enumerate() {
            for ((w, s), sum) in est
                .weighted
                .iter_mut()
                .zip(score)
                .zip(est.score_sums[t].iter_mut())
            {
                *w += s * r;
                *sum += s;
            }
            est.reward_sums[t] += r;
        }
        est.returns.push(rtg.first().copied().unwrap_or(0.0));
        est.rmses.push(trace.rmse());
        est.episodes += 1;
    }
    Ok(est)
}

fn episode_seed(base: u64, epoch: usize, index: usize, per_epoch: usize) -> u64 {
    derive_seed(base, (epoch * per_epoch + index) as u64)
}

/// REINFORCE with reward-to-go and a per-step exponential-moving-average
/// baseline; one clipped ascent step per epoch. `on_epoch` sees each
/// epoch's statistics as they are produced.
pub fn train<S: EpisodeSource + ?Sized>(
    config: &TrainConfig,
    source: &S,
    initial: PolicyParameters,
    taps_init: &FilterTaps,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut params = initial;
    let mut flat = params.to_flat();
    let mut stepper = Stepper::new(config.optimizer, flat.len(), config.learning_rate);
    let mut baseline: Option<Vec<f64>> = None;
    let mut curve = Vec::with_capacity(config.epochs);
    let eval_traj: Vec<Trajectory> = config
        .eval_seeds
        .iter()
        .map(|&s| realize(source, config.horizon, taps_init.order(), s))
        .collect::<Result<_>>()?;

    for epoch in 0..config.epochs {
        let seeds: Vec<u64> = (0..config.episodes_per_epoch)
            .map(|i| episode_seed(config.seed, epoch, i, config.episodes_per_epoch))
            .collect();
        let est = estimate_gradient_with(
            source,
            &params,
            taps_init,
            config.horizon,
            config.discount,
            &seeds,
            config.control_variate,
        )?;
        let mean_rtg = est.mean_rewards_to_go();
        let b = baseline.get_or_insert_with(|| mean_rtg.clone());
        let mut grad = est.gradient(b);
        for (bt, m) in b.iter_mut().zip(&mean_rtg) {
            *bt = config.baseline_momentum * *bt + (1.0 - config.baseline_momentum) * m;
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("policy gradient at epoch {}", epoch + 1)));
        }
        let grad_norm = clip_global_norm(&mut grad, config.grad_clip);
        stepper.ascend(&mut flat, &grad);
        params.set_flat(&flat)?;

        let (eval_reward, eval_rmse) = if eval_traj.is_empty() {
            (None, None)
        } else {
            let mut reward = 0.0;
            let mut rmse = 0.0;
            for traj in &eval_traj {
                let trace = rollout_on(
                    traj,
                    &params,
                    taps_init,
                    ActionMode::Mean,
                    &mut stream(0, streams::ACTIONS),
                    None,
                )?;
                reward += discounted_return(&trace, config.discount);
                rmse += trace.rmse();
            }
            let n = eval_traj.len() as f64;
            (Some(reward / n), Some(rmse / n))
        };
        let n = est.episodes.max(1) as f64;
        let stats = EpochStats {
            epoch: epoch + 1,
            mean_reward: est.returns.iter().sum::<f64>() / n,
            mean_rmse: est.rmses.iter().sum::<f64>() / n,
            eval_reward,
            eval_rmse,
            grad_norm,
        };
        on_epoch(&stats);
        curve.push(stats);
    }
    Ok(TrainOutcome { params, curve })
}

/// Predictions of the policy with mean actions.
pub fn policy_predictions(
    trajectory: &Trajectory,
    params: &PolicyParameters,
    taps_init: &FilterTaps,
) -> Result<Vec<f64>> {
    let trace = rollout_on(
        trajectory,
        params,
        taps_init,
        ActionMode::Mean,
        &mut stream(0, streams::ACTIONS),
        None,
    )?;
    Ok(trace.steps.iter().map(|s| s.prediction).collect())
}

/// Root mean square over runs of the per-step error.
pub fn rmse_curve(errors: &[Vec<f64>]) -> Vec<f64> {
    let horizon = errors.first().map(Vec::len).unwrap_or(0);
    (0..horizon)
        .map(|t| {
            let ss: f64 = errors.iter().map(|e| e[t] * e[t]).sum();
            libm::sqrt(ss / errors.len() as f64)
        })
        .collect()
}

/// Per-step RMSE of the mean-action policy over the given run seeds.
pub fn evaluate<S: EpisodeSource + ?Sized>(
    params: &PolicyParameters,
    taps_init: &FilterTaps,
    source: &S,
    horizon: usize,
    run_seeds: &[u64],
) -> Result<Vec<f64>> {
    if run_seeds.is_empty() {
        return Err(Error::InvalidConfig("evaluation needs at least one run".into()));
    }
    let mut errors = Vec::with_capacity(run_seeds.len());
    for &seed in run_seeds {
        let traj = realize(source, horizon, taps_init.order(), seed)?;
        let preds = policy_predictions(&traj, params, taps_init)?;
        errors.push(
            preds
                .iter()
                .zip(&traj.steps)
                .map(|(p, s)| p - s.ground_truth)
                .collect(),
        );
    }
    Ok(rmse_curve(&errors))
}
