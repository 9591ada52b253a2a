use gmarl_core::baselines::{
    batch_fit, online_filter_gradient, online_filter_step, online_filter_step_instance,
    online_gnn_step, BatchDesign, GnnInput, Instance, OnlineGnn,
};
use gmarl_core::episode::{realize, AttachmentRule, SyntheticSource};
use gmarl_core::filter::{predict_from_features, predict_incoming, shift_features, FilterTaps};
use gmarl_core::graph::{AdjacencyMatrix, AttachmentVector, SignalDynamics};
use gmarl_core::policy::ContextInput;
use gmarl_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(3..8);
    let mut adj = AdjacencyMatrix::zeros(n);
    for i in 0..n {
        adj.set_edge(i, (i + 1) % n, rng.random_range(0.5..1.5)).ok();
        let j = rng.random_range(0..n);
        if j != i {
            adj.set_edge(i, j, rng.random_range(0.5..1.5)).unwrap();
        }
    }
    let attachment = AttachmentVector::new((0..n).map(|_| rng.random_range(0.0..1.0)).collect());
    let x_prev = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Instance {
        adj_prev: adj,
        attachment,
        x_prev,
        truth: 0.0,
    }
}

/// Zero-noise synthetic sequence whose truths are produced by known taps.
fn planted(seed: u64, taps: &FilterTaps, horizon: usize) -> BatchDesign {
    let source = SyntheticSource {
        rule: AttachmentRule::Uniform,
        dynamics: SignalDynamics {
            noise_variance: 0.0,
            ..SignalDynamics::default()
        },
        ..SyntheticSource::default()
    };
    let traj = realize(&source, horizon, taps.order(), seed).unwrap();
    let mut design = BatchDesign::from_observations(&traj.steps, taps.order()).unwrap();
    for (row, y) in design.rows.iter().zip(design.targets.iter_mut()) {
        let mut full = vec![0.0];
        full.extend_from_slice(row);
        *y = predict_from_features(&full, taps);
    }
    design
}

#[test]
fn planted_taps_are_recovered() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = FilterTaps::new(vec![0.0, rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5), rng.random_range(-0.1..0.1)]).unwrap();
        let design = planted(seed, &truth, 50);
        let fit = batch_fit(&design, 0.0).unwrap();
        for (a, b) in fit.as_slice().iter().zip(truth.as_slice()) {
            assert!((a - b).abs() < 1e-8, "seed {seed}: {fit:?} vs {truth:?}");
        }
    }
}

#[test]
fn residual_is_orthogonal_to_the_design() {
    for seed in 0..20 {
        let source = SyntheticSource::default();
        let traj = realize(&source, 50, 3, 100 + seed).unwrap();
        let design = BatchDesign::from_observations(&traj.steps, 3).unwrap();
        let fit = batch_fit(&design, 0.0).unwrap();
        let r = design.residuals(&fit);
        for k in 0..3 {
            let col_norm: f64 = design.rows.iter().map(|row| row[k] * row[k]).sum::<f64>().sqrt();
            let dot: f64 = design.rows.iter().zip(&r).map(|(row, ri)| row[k] * ri).sum();
            assert!(dot.abs() / col_norm.max(1.0) < 1e-8, "seed {seed} column {k}: {dot}");
        }
    }
}

#[test]
fn huge_ridge_shrinks_taps_to_zero() {
    let design = planted(1, &FilterTaps::new(vec![0.0, 0.7, -0.2, 0.03]).unwrap(), 30);
    let fit = batch_fit(&design, 1e12).unwrap();
    assert!(fit.as_slice().iter().all(|h| h.abs() < 1e-6));
}

#[test]
fn too_short_or_singular_designs_are_reported() {
    let short = BatchDesign {
        rows: vec![vec![1.0, 2.0, 3.0]],
        targets: vec![1.0],
        order: 3,
    };
    assert!(matches!(batch_fit(&short, 0.0), Err(Error::InvalidConfig(_))));
    let singular = BatchDesign {
        rows: vec![vec![1.0, 1.0], vec![2.0, 2.0]],
        targets: vec![1.0, 2.0],
        order: 2,
    };
    assert!(matches!(batch_fit(&singular, 0.0), Err(Error::SingularSystem)));
    assert!(batch_fit(&singular, 1e-3).is_ok());
}

#[test]
fn online_filter_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let mut inst = random_instance(&mut rng);
        inst.truth = rng.random_range(-2.0..2.0);
        let taps = FilterTaps::new((0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let f = shift_features(&inst.adj_prev, &inst.attachment, &inst.x_prev, 3).unwrap();
        let g = online_filter_gradient(&taps, &f, inst.truth);
        let loss = |h: &[f64]| {
            let p = predict_incoming(&inst.adj_prev, &inst.attachment, &inst.x_prev, &FilterTaps::new(h.to_vec()).unwrap()).unwrap();
            (p - inst.truth).powi(2)
        };
        for k in 0..4 {
            let eps = 1e-6;
            let mut plus = taps.as_slice().to_vec();
            plus[k] += eps;
            let mut minus = taps.as_slice().to_vec();
            minus[k] -= eps;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            let rel = (g[k] - numeric).abs() / g[k].abs().max(numeric.abs()).max(1e-2);
            assert!(rel < 1e-6, "tap {k}: {} vs {numeric}", g[k]);
        }
    }
}

#[test]
fn online_filter_fixed_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut inst = random_instance(&mut rng);
    let taps = FilterTaps::new(vec![0.2, 0.5, -0.1, 0.02]).unwrap();
    inst.truth = predict_incoming(&inst.adj_prev, &inst.attachment, &inst.x_prev, &taps).unwrap();
    assert_eq!(online_filter_step_instance(&taps, &inst, 0.1).unwrap(), taps);
    inst.truth += 1.0;
    assert_eq!(online_filter_step_instance(&taps, &inst, 0.0).unwrap(), taps);
}

proptest! {
    #[test]
    fn small_online_steps_reduce_the_instantaneous_loss(seed in any::<u64>(), truth in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng);
        let taps = FilterTaps::new((0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let f = shift_features(&inst.adj_prev, &inst.attachment, &inst.x_prev, 3).unwrap();
        let before = (predict_from_features(&f, &taps) - truth).powi(2);
        let g = online_filter_gradient(&taps, &f, truth);
        let gg: f64 = g.iter().map(|v| v * v).sum();
        prop_assume!(gg > 1e-12);
        let step = 0.1 / (1.0 + f.iter().map(|v| v * v).sum::<f64>());
        let next = online_filter_step(&taps, &f, truth, step).unwrap();
        let after = (predict_from_features(&f, &next) - truth).powi(2);
        prop_assert!(after < before);
    }
}

#[test]
fn online_gnn_zero_step_and_zero_signal() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let gnn = OnlineGnn::init(&mut rng);
    let input = GnnInput {
        context: ContextInput {
            own: 0.0,
            neighbor: 0.4,
        },
        neighbor_sum: 1.3,
    };
    assert_eq!(online_gnn_step(&gnn, input, 2.0, 0.0).unwrap(), gnn);
    let zero = GnnInput {
        context: ContextInput {
            own: 0.0,
            neighbor: 0.0,
        },
        neighbor_sum: 0.0,
    };
    assert_eq!(gnn.predict(zero), 0.0);
}
