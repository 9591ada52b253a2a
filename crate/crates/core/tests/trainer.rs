use gmarl_core::baselines::{batch_fit, batch_predictions, BatchDesign};
use gmarl_core::episode::{realize, Episode, EpisodeSource, SyntheticSource};
use gmarl_core::filter::FilterTaps;
use gmarl_core::graph::{
    AdjacencyMatrix, AttachmentSpec, AttachmentVector, ExpandingGraphState, SignalModel,
};
use gmarl_core::policy::{action_means, ActionMode, ContextInput, PolicyParameters};
use gmarl_core::rng::{stream, streams};
use gmarl_core::trainer::{
    estimate_gradient, evaluate, rollout, rollout_on, train, TrainConfig,
};
use gmarl_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One step: the incoming node attaches to a node holding 1 and reveals 1,
/// so the prediction is `h_1` and the loss `(h_1 - 1)^2`.
struct Bandit;

impl EpisodeSource for Bandit {
    fn episode(&self, _seed: u64) -> Result<Episode> {
        Ok(Episode {
            state: ExpandingGraphState::new(
                AdjacencyMatrix::from_dense(&[vec![0.0, 1.0], vec![1.0, 0.0]])?,
                vec![1.0, 0.0],
            )?,
            attachment: AttachmentSpec::Replay(vec![AttachmentVector::new(vec![1.0, 0.0])]),
            signal: SignalModel::Appended(vec![1.0]),
        })
    }
    fn max_horizon(&self) -> Option<usize> {
        Some(1)
    }
}

fn bandit_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        horizon: 1,
        filter_order: 1,
        epochs,
        ..TrainConfig::default()
    }
}

fn bandit_input() -> ContextInput {
    let traj = realize(&Bandit, 1, 1, 0).unwrap();
    traj.steps[0].context
}

#[test]
fn bandit_policy_learns_the_optimal_tap() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = PolicyParameters::init(1, &mut rng);
    let taps = FilterTaps::zeros(1);
    let out = train(&bandit_config(2000), &Bandit, params, &taps, |_| {}).unwrap();
    let mean = action_means(&out.params, &taps, bandit_input()).unwrap();
    assert!((mean[1] - 1.0).abs() < 0.1, "learned tap mean {}", mean[1]);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = PolicyParameters::init(3, &mut rng);
    let config = TrainConfig {
        learning_rate: 0.0,
        epochs: 3,
        horizon: 10,
        episodes_per_epoch: 4,
        ..TrainConfig::default()
    };
    let out = train(&config, &SyntheticSource::default(), params.clone(), &FilterTaps::zeros(3), |_| {}).unwrap();
    assert_eq!(out.params, params);
    assert_eq!(out.curve.len(), 3);
}

fn live_policy(seed: u64, order: usize) -> PolicyParameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = PolicyParameters::init(order, &mut rng);
    for v in params.action_head.data_mut() {
        *v = rng.random_range(-0.3..0.3);
    }
    for v in params.log_spread.data_mut() {
        *v = (0.3f64).ln();
    }
    params
}

/// Per-episode score-function samples on the bandit, projected on `dirs`.
fn projected_samples(
    params: &PolicyParameters,
    baseline: f64,
    dirs: &[Vec<f64>],
    episodes: u64,
) -> Vec<Vec<f64>> {
    let taps = FilterTaps::zeros(1);
    (0..episodes)
        .map(|seed| {
            let est = estimate_gradient(&Bandit, params, &taps, 1, 0.95, &[seed]).unwrap();
            let g = est.gradient(&[baseline]);
            dirs.iter().map(|d| d.iter().zip(&g).map(|(a, b)| a * b).sum()).collect()
        })
        .collect()
}

fn mean_and_se(samples: &[Vec<f64>], j: usize) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s[j]).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn directions(len: usize, count: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut dirs: Vec<Vec<f64>> = (0..count)
        .map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    // the two log-spread coordinates on their own
    for k in 0..2 {
        let mut d = vec![0.0; len];
        d[len - 2 + k] = 1.0;
        dirs.push(d);
    }
    dirs
}

#[test]
fn bandit_gradient_estimate_is_unbiased() {
    let params = live_policy(3, 1);
    let dirs = directions(params.len(), 4);
    let taps = FilterTaps::zeros(1);
    let input = bandit_input();
    // expected reward -((mu_1 - 1)^2 + sigma_1^2), differentiated numerically
    let objective = |flat: &[f64]| {
        let mut p = params.clone();
        p.set_flat(flat).unwrap();
        let mu = action_means(&p, &taps, input).unwrap()[1];
        let sigma = p.log_spread.data()[1].exp();
        -((mu - 1.0).powi(2) + sigma * sigma)
    };
    let flat = params.to_flat();
    let samples = projected_samples(&params, 0.0, &dirs, 10_000);
    for (j, d) in dirs.iter().enumerate() {
        let eps = 1e-6;
        let plus: Vec<f64> = flat.iter().zip(d).map(|(p, v)| p + eps * v).collect();
        let minus: Vec<f64> = flat.iter().zip(d).map(|(p, v)| p - eps * v).collect();
        let analytic = (objective(&plus) - objective(&minus)) / (2.0 * eps);
        let (mean, se) = mean_and_se(&samples, j);
        assert!(
            (mean - analytic).abs() <= 3.0 * se,
            "direction {j}: estimate {mean} ± {se}, analytic {analytic}"
        );
    }
}

#[test]
fn baseline_does_not_shift_the_expected_gradient() {
    let params = live_policy(4, 1);
    let dirs = directions(params.len(), 4);
    let plain = projected_samples(&params, 0.0, &dirs, 10_000);
    let shifted = projected_samples(&params, -0.8, &dirs, 10_000);
    for j in 0..dirs.len() {
        // paired samples: the difference is b * score, mean zero
        let diff: Vec<Vec<f64>> = plain
            .iter()
            .zip(&shifted)
            .map(|(a, b)| vec![a[j] - b[j]])
            .collect();
        let (mean, se) = mean_and_se(&diff, 0);
        assert!(mean.abs() <= 3.0 * se, "direction {j}: {mean} ± {se}");
    }
}

#[test]
fn frozen_batch_taps_reproduce_the_batch_filter() {
    let source = SyntheticSource::default();
    let train_traj = realize(&source, 50, 3, 1000).unwrap();
    let taps = batch_fit(&BatchDesign::from_observations(&train_traj.steps, 3).unwrap(), 1e-6).unwrap();
    let params = PolicyParameters::init(3, &mut ChaCha8Rng::seed_from_u64(5));
    for seed in 0..5 {
        let traj = realize(&source, 50, 3, seed).unwrap();
        let trace = rollout_on(&traj, &params, &taps, ActionMode::Mean, &mut stream(seed, streams::ACTIONS), None).unwrap();
        let batch = batch_predictions(&traj, &taps);
        for (step, (b, truth)) in trace.steps.iter().zip(batch.iter().zip(traj.truths())) {
            assert_eq!(step.prediction, *b);
            assert_eq!(step.loss, (b - truth).powi(2));
            assert_eq!(step.taps_after, taps);
        }
    }
}

#[test]
fn rollouts_are_reproducible_and_sized() {
    let params = live_policy(6, 3);
    let taps = FilterTaps::zeros(3);
    let episode = SyntheticSource::default().episode(9).unwrap();
    let a = rollout(&episode, &params, &taps, 20, 9, ActionMode::Sample).unwrap();
    let b = rollout(&episode, &params, &taps, 20, 9, ActionMode::Sample).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 20);
    assert!(a.steps.iter().all(|s| s.loss >= 0.0));
    let one = rollout(&episode, &params, &taps, 1, 9, ActionMode::Sample).unwrap();
    assert_eq!(one.len(), 1);
}

#[test]
fn evaluation_is_deterministic_and_transfers_in_horizon() {
    let params = live_policy(7, 3);
    let taps = FilterTaps::new(vec![0.0, 0.3, 0.0, 0.0]).unwrap();
    let source = SyntheticSource::default();
    let seeds: Vec<u64> = (0..8).collect();
    let a = evaluate(&params, &taps, &source, 50, &seeds).unwrap();
    assert_eq!(a, evaluate(&params, &taps, &source, 50, &seeds).unwrap());
    assert_eq!(a.len(), 50);
    assert_eq!(evaluate(&params, &taps, &source, 100, &seeds).unwrap().len(), 100);
    assert!(evaluate(&params, &taps, &source, 50, &[]).is_err());
}

#[test]
fn perfect_taps_on_noise_free_replay_give_zero_error() {
    let params = PolicyParameters::init(1, &mut ChaCha8Rng::seed_from_u64(8));
    let curve = evaluate(&params, &FilterTaps::new(vec![0.0, 1.0]).unwrap(), &Bandit, 1, &[0, 1, 2]).unwrap();
    assert_eq!(curve, vec![0.0]);
}

#[test]
fn invalid_configs_are_rejected() {
    let params = PolicyParameters::init(1, &mut ChaCha8Rng::seed_from_u64(8));
    for config in [
        TrainConfig { discount: 1.5, ..bandit_config(1) },
        TrainConfig { learning_rate: -1.0, ..bandit_config(1) },
        TrainConfig { episodes_per_epoch: 0, ..bandit_config(1) },
    ] {
        assert!(train(&config, &Bandit, params.clone(), &FilterTaps::zeros(1), |_| {}).is_err());
    }
}
