//! Comparison methods: batch least-squares filter, online filter, online GNN.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Tape, Tensor};
use crate::episode::{StepObservation, Trajectory};
use crate::error::{check_dim, Error, Result};
use crate::filter::{predict_from_features, shift_features, FilterTaps};
use crate::graph::{AdjacencyMatrix, AttachmentVector};
use crate::linalg::cholesky_solve;
use crate::policy::{ContextInput, CONTEXT_WIDTH};

pub const DEFAULT_RIDGE: f64 = 1e-6;
pub const DEFAULT_FILTER_STEP: f64 = 1e-2;
pub const DEFAULT_GNN_STEP: f64 = 1e-3;

/// One prediction instance on the graph before expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub adj_prev: AdjacencyMatrix,
    pub attachment: AttachmentVector,
    pub x_prev: Vec<f64>,
    pub truth: f64,
}

/// Regression rows `M[t][k-1] = a^T A^(k-1) x` and the targets.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchDesign {
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub order: usize,
}

impl BatchDesign {
    pub fn from_instances(instances: &[Instance], order: usize) -> Result<Self> {
        let mut rows = Vec::with_capacity(instances.len());
        let mut targets = Vec::with_capacity(instances.len());
        for inst in instances {
            let f = shift_features(&inst.adj_prev, &inst.attachment, &inst.x_prev, order)?;
            rows.push(f[1..].to_vec());
            targets.push(inst.truth);
        }
        Ok(Self {
            rows,
            targets,
            order,
        })
    }

    pub fn from_observations(steps: &[StepObservation], order: usize) -> Result<Self> {
        let mut rows = Vec::with_capacity(steps.len());
        for s in steps {
            check_dim("observation features", order + 1, s.features.len())?;
            rows.push(s.features[1..].to_vec());
        }
        Ok(Self {
            rows,
            targets: steps.iter().map(|s| s.ground_truth).collect(),
            order,
        })
    }

    pub fn residuals(&self, taps: &FilterTaps) -> Vec<f64> {
        let h = &taps.as_slice()[1..];
        self.rows
            .iter()
            .zip(&self.targets)
            .map(|(row, y)| row.iter().zip(h).map(|(m, h)| m * h).sum::<f64>() - y)
            .collect()
    }
}

/// Ridge least squares over one expansion sequence via the normal
/// equations. `h_0` is returned as 0 (it never reaches the prediction).
pub fn batch_fit(design: &BatchDesign, ridge: f64) -> Result<FilterTaps> {
    let k = design.order;
    if design.rows.len() < k {
        return Err(Error::InvalidConfig(alloc::format!(
            "batch fit needs at least {k} steps, got {}",
            design.rows.len()
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidConfig("ridge must be nonnegative".into()));
    }
    let mut gram = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    for (row, &y) in design.rows.iter().zip(&design.targets) {
        for i in 0..k {
            rhs[i] += row[i] * y;
            for j in 0..k {
                gram[i * k + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..k {
        gram[i * k + i] += ridge;
    }
    let h = cholesky_solve(&gram, &rhs)?;
    let mut taps = vec![0.0];
    taps.extend(h);
    FilterTaps::new(taps)
}

/// `2 (pred - truth) m` with `m_0 = 0`.
pub fn online_filter_gradient(taps: &FilterTaps, features: &[f64], truth: f64) -> Vec<f64> {
    let err = predict_from_features(features, taps) - truth;
    features
        .iter()
        .enumerate()
        .map(|(k, m)| if k == 0 { 0.0 } else { 2.0 * err * m })
        .collect()
}

/// One gradient step on the instantaneous squared loss.
pub fn online_filter_step(
    taps: &FilterTaps,
    features: &[f64],
    truth: f64,
    step_size: f64,
) -> Result<FilterTaps> {
    check_dim("features", taps.as_slice().len(), features.len())?;
    let g = online_filter_gradient(taps, features, truth);
    FilterTaps::new(
        taps.as_slice()
            .iter()
            .zip(&g)
            .map(|(h, g)| h - step_size * g)
            .collect(),
    )
}

/// Same as [`online_filter_step`] but from the raw instance.
pub fn online_filter_step_instance(taps: &FilterTaps, inst: &Instance, step_size: f64) -> Result<FilterTaps> {
    let f = shift_features(&inst.adj_prev, &inst.attachment, &inst.x_prev, taps.order())?;
    online_filter_step(taps, &f, inst.truth, step_size)
}

/// Fixed-taps predictions.
pub fn batch_predictions(trajectory: &Trajectory, taps: &FilterTaps) -> Vec<f64> {
    trajectory
        .steps
        .iter()
        .map(|s| predict_from_features(&s.features, taps))
        .collect()
}

/// Predict, then update on the revealed truth.
pub fn online_filter_predictions(
    trajectory: &Trajectory,
    taps_init: &FilterTaps,
    step_size: f64,
) -> Result<Vec<f64>> {
    let mut taps = taps_init.clone();
    let mut preds = Vec::with_capacity(trajectory.len());
    for s in &trajectory.steps {
        preds.push(predict_from_features(&s.features, &taps));
        taps = online_filter_step(&taps, &s.features, s.ground_truth, step_size)?;
    }
    Ok(preds)
}

/// Graph-convolution layer (same shape as the policy's context layer) with
/// a linear readout over the incoming node's embedding and the
/// attachment-weighted neighbor sum `a^T x`.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineGnn {
    pub context_self: Tensor,
    pub context_neighbor: Tensor,
    pub readout: Tensor,
    pub neighbor_gain: Tensor,
}

/// Inputs of one online-GNN prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnnInput {
    pub context: ContextInput,
    /// `a^T x` on the graph before expansion.
    pub neighbor_sum: f64,
}

impl GnnInput {
    pub fn from_observation(s: &StepObservation) -> Self {
        Self {
            context: s.context,
            neighbor_sum: s.features.get(1).copied().unwrap_or(0.0),
        }
    }
}

impl OnlineGnn {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization.
    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut u = |rows: usize, cols: usize, fan_in: usize| {
            let b = 1.0 / libm::sqrt(fan_in as f64);
            Tensor::new(
                rows,
                cols,
                (0..rows * cols).map(|_| rng.random_range(-b..=b)).collect(),
            )
            .expect("sized")
        };
        Self {
            context_self: u(1, CONTEXT_WIDTH, 1),
            context_neighbor: u(1, CONTEXT_WIDTH, 1),
            readout: u(CONTEXT_WIDTH, 1, CONTEXT_WIDTH + 1),
            neighbor_gain: u(1, 1, CONTEXT_WIDTH + 1),
        }
    }

    fn tensors(&self) -> [&Tensor; 4] {
        [
            &self.context_self,
            &self.context_neighbor,
            &self.readout,
            &self.neighbor_gain,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.context_self,
            &mut self.context_neighbor,
            &mut self.readout,
            &mut self.neighbor_gain,
        ]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.tensors().iter().map(|t| t.len()).sum();
        check_dim("gnn parameters", total, flat.len())?;
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn predict(&self, input: GnnInput) -> f64 {
        let embedding = self
            .context_self
            .data()
            .iter()
            .zip(self.context_neighbor.data())
            .map(|(ws, wn)| (input.context.own * ws + input.context.neighbor * wn).max(0.0));
        embedding
            .zip(self.readout.data())
            .map(|(e, w)| e * w)
            .sum::<f64>()
            + self.neighbor_gain.item() * input.neighbor_sum
    }

    /// Prediction and flat gradient of `(pred - truth)^2`.
    pub fn loss_gradient(&self, input: GnnInput, truth: f64) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let ws = tape.leaf(self.context_self.clone());
        let wn = tape.leaf(self.context_neighbor.clone());
        let ro = tape.leaf(self.readout.clone());
        let gain = tape.leaf(self.neighbor_gain.clone());
        let own = tape.constant(Tensor::scalar(input.context.own));
        let nb = tape.constant(Tensor::scalar(input.context.neighbor));
        let sum = tape.constant(Tensor::scalar(input.neighbor_sum));
        let a = tape.matmul(own, ws)?;
        let b = tape.matmul(nb, wn)?;
        let pre = tape.add(a, b)?;
        let emb = tape.relu(pre);
        let read = tape.matmul(emb, ro)?;
        let direct = tape.matmul(sum, gain)?;
        let pred = tape.add(read, direct)?;
        let target = tape.constant(Tensor::scalar(truth));
        let err = tape.sub(pred, target)?;
        let loss = tape.mul(err, err)?;
        let prediction = tape.value(pred).item();
        let grads = tape.backward(loss)?;
        let mut flat = Vec::new();
        for (v, t) in [ws, wn, ro, gain].into_iter().zip(self.tensors()) {
            match grads.get(v) {
                Some(g) => flat.extend_from_slice(g.data()),
                None => flat.extend(core::iter::repeat_n(0.0, t.len())),
            }
        }
        Ok((prediction, flat))
    }
}

/// One SGD step on the instantaneous squared loss.
pub fn online_gnn_step(gnn: &OnlineGnn, input: GnnInput, truth: f64, step_size: f64) -> Result<OnlineGnn> {
    let (_, grad) = gnn.loss_gradient(input, truth)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("online GNN gradient".into()));
    }
    let mut flat = gnn.to_flat();
    for (p, g) in flat.iter_mut().zip(&grad) {
        *p -= step_size * g;
    }
    let mut next = gnn.clone();
    next.set_flat(&flat)?;
    Ok(next)
}

/// Predict, then update on the revealed truth.
pub fn online_gnn_predictions(
    trajectory: &Trajectory,
    gnn_init: &OnlineGnn,
    step_size: f64,
) -> Result<(Vec<f64>, OnlineGnn)> {
    let mut gnn = gnn_init.clone();
    let mut preds = Vec::with_capacity(trajectory.len());
    for s in &trajectory.steps {
        let input = GnnInput::from_observation(s);
        preds.push(gnn.predict(input));
        gnn = online_gnn_step(&gnn, input, s.ground_truth, step_size)?;
    }
    Ok((preds, gnn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn scalar_least_squares() {
        let design = BatchDesign {
            rows: vec![vec![1.0], vec![1.0]],
            targets: vec![1.0, 3.0],
            order: 1,
        };
        let taps = batch_fit(&design, 0.0).unwrap();
        assert!((taps.as_slice()[1] - 2.0).abs() < 1e-14);
        assert_eq!(taps.as_slice()[0], 0.0);
    }

    #[test]
    fn huge_ridge_shrinks_to_zero() {
        let design = BatchDesign {
            rows: vec![vec![1.0, 0.5], vec![2.0, -1.0], vec![0.3, 0.3]],
            targets: vec![1.0, 3.0, -2.0],
            order: 2,
        };
        let taps = batch_fit(&design, 1e12).unwrap();
        assert!(taps.as_slice().iter().all(|h| h.abs() < 1e-10));
    }

    #[test]
    fn singular_without_ridge() {
        let design = BatchDesign {
            rows: vec![vec![1.0, 2.0], vec![2.0, 4.0]],
            targets: vec![1.0, 2.0],
            order: 2,
        };
        assert_eq!(batch_fit(&design, 0.0).unwrap_err(), Error::SingularSystem);
        assert!(batch_fit(&design, 1e-3).is_ok());
    }

    #[test]
    fn too_short_sequence_rejected() {
        let design = BatchDesign {
            rows: vec![vec![1.0, 2.0, 3.0]],
            targets: vec![1.0],
            order: 3,
        };
        assert!(batch_fit(&design, 1e-6).is_err());
    }

    #[test]
    fn online_filter_fixed_points() {
        let taps = FilterTaps::new(vec![0.1, 0.5, -0.2]).unwrap();
        let f = [0.0, 2.0, 1.0];
        let truth = predict_from_features(&f, &taps);
        assert_eq!(online_filter_step(&taps, &f, truth, 0.3).unwrap(), taps);
        assert_eq!(online_filter_step(&taps, &f, truth + 4.0, 0.0).unwrap(), taps);
    }

    #[test]
    fn online_filter_decreases_loss_for_small_steps() {
        let taps = FilterTaps::new(vec![0.0, 0.5, -0.2, 0.1]).unwrap();
        let f = [0.0, 2.0, -1.0, 4.0];
        let truth = 1.7;
        let before = crate::filter::prediction_loss(predict_from_features(&f, &taps), truth);
        let next = online_filter_step(&taps, &f, truth, 1e-3).unwrap();
        let after = crate::filter::prediction_loss(predict_from_features(&f, &next), truth);
        assert!(after < before);
    }

    #[test]
    fn gnn_zero_signal_predicts_zero() {
        let gnn = OnlineGnn::init(&mut stream(1, 3));
        let input = GnnInput {
            context: ContextInput {
                own: 0.0,
                neighbor: 0.0,
            },
            neighbor_sum: 0.0,
        };
        assert_eq!(gnn.predict(input), 0.0);
    }

    #[test]
    fn gnn_zero_step_is_identity() {
        let gnn = OnlineGnn::init(&mut stream(2, 3));
        let input = GnnInput {
            context: ContextInput {
                own: 0.0,
                neighbor: 0.8,
            },
            neighbor_sum: 1.3,
        };
        assert_eq!(online_gnn_step(&gnn, input, 5.0, 0.0).unwrap(), gnn);
    }

    #[test]
    fn gnn_tape_prediction_matches_direct() {
        let gnn = OnlineGnn::init(&mut stream(3, 3));
        let input = GnnInput {
            context: ContextInput {
                own: 0.0,
                neighbor: -0.6,
            },
            neighbor_sum: 2.1,
        };
        let (p, _) = gnn.loss_gradient(input, 0.0).unwrap();
        assert!((p - gnn.predict(input)).abs() < 1e-14);
    }
}
