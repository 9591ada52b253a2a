//! Order-K polynomial graph filter on zero-padded signals.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::graph::{AdjacencyMatrix, AttachmentVector};

/// Filter taps `h_0..h_K`; also the joint state of the K+1 agents.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTaps {
    taps: Vec<f64>,
}

impl FilterTaps {
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.len() < 2 {
            return Err(Error::InvalidConfig("filter order must be at least 1".into()));
        }
        Ok(Self { taps })
    }

    pub fn zeros(order: usize) -> Self {
        Self {
            taps: vec![0.0; order.max(1) + 1],
        }
    }

    pub fn order(&self) -> usize {
        self.taps.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.taps
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.taps
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.taps
    }
}

/// The signal of the expanded graph with the unknown incoming value set to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedSignal {
    values: Vec<f64>,
}

impl PaddedSignal {
    pub fn from_previous(previous: &[f64]) -> Self {
        let mut values = Vec::with_capacity(previous.len() + 1);
        values.extend_from_slice(previous);
        values.push(0.0);
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[cfg(test)]
    pub(crate) fn scaled(&self, alpha: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }
}

/// Counts shift (sparse mat-vec) applications.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ShiftCounter(pub usize);

/// `sum_k h_k A^k x` by iterated shifts.
pub fn apply_filter(adj: &AdjacencyMatrix, padded: &PaddedSignal, taps: &FilterTaps) -> Result<Vec<f64>> {
    apply_filter_counted(adj, padded, taps, &mut ShiftCounter::default())
}

pub fn apply_filter_counted(
    adj: &AdjacencyMatrix,
    padded: &PaddedSignal,
    taps: &FilterTaps,
    counter: &mut ShiftCounter,
) -> Result<Vec<f64>> {
    check_dim("padded signal", adj.n(), padded.len())?;
    let h = taps.as_slice();
    let mut shifted = padded.values.clone();
    let mut next = vec![0.0; shifted.len()];
    let mut out: Vec<f64> = shifted.iter().map(|v| h[0] * v).collect();
    for &hk in &h[1..] {
        adj.shift_into(&shifted, &mut next)?;
        counter.0 += 1;
        core::mem::swap(&mut shifted, &mut next);
        for (o, s) in out.iter_mut().zip(&shifted) {
            *o += hk * s;
        }
    }
    Ok(out)
}

/// Regression features of the incoming-node prediction: `m_0 = 0` and
/// `m_k = [A_t^k x~]_{N_t}` for `k = 1..=order`, where `A_t` is `adj_prev`
/// expanded by `a`. The expanded graph is never materialized: a shift maps
/// `(v, s)` to `(A v + a s, a^T v)`.
///
/// For `k <= 2` this is `a^T A^(k-1) x`; from `k = 3` on it also counts
/// walks that return through the incoming node.
pub fn shift_features(
    adj_prev: &AdjacencyMatrix,
    a: &AttachmentVector,
    x_prev: &[f64],
    order: usize,
) -> Result<Vec<f64>> {
    check_dim("attachment vector", adj_prev.n(), a.len())?;
    check_dim("previous signal", adj_prev.n(), x_prev.len())?;
    let mut features = vec![0.0; order + 1];
    let mut v = x_prev.to_vec();
    let mut next = vec![0.0; v.len()];
    let mut s = 0.0;
    for k in 1..=order {
        let s_next = a.dot(&v)?;
        if k < order {
            adj_prev.shift_into(&v, &mut next)?;
            if s != 0.0 {
                for (i, w) in a.support() {
                    next[i] += w * s;
                }
            }
            core::mem::swap(&mut v, &mut next);
        }
        s = s_next;
        features[k] = s;
    }
    Ok(features)
}

/// The incoming-node entry of the filter output on the expanded graph,
/// `sum_{k>=1} h_k [A_t^k x~]_{N_t}`; `h_0` never contributes.
pub fn predict_incoming(
    adj_prev: &AdjacencyMatrix,
    a: &AttachmentVector,
    x_prev: &[f64],
    taps: &FilterTaps,
) -> Result<f64> {
    let features = shift_features(adj_prev, a, x_prev, taps.order())?;
    Ok(predict_from_features(&features, taps))
}

pub fn predict_from_features(features: &[f64], taps: &FilterTaps) -> f64 {
    features
        .iter()
        .zip(taps.as_slice())
        .skip(1)
        .map(|(m, h)| m * h)
        .sum()
}

/// Squared error.
pub fn prediction_loss(pred: f64, truth: f64) -> f64 {
    let e = pred - truth;
    e * e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::expand_adjacency;

    fn edge() -> AdjacencyMatrix {
        AdjacencyMatrix::from_dense(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    #[test]
    fn identity_tap() {
        let adj = expand_adjacency(&edge(), &AttachmentVector::new(vec![1.0, 1.0])).unwrap();
        let padded = PaddedSignal::from_previous(&[1.0, 2.0]);
        let taps = FilterTaps::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(apply_filter(&adj, &padded, &taps).unwrap(), padded.values());
    }

    #[test]
    fn single_shift_on_disconnected_incoming_node() {
        let adj = expand_adjacency(&edge(), &AttachmentVector::zeros(2)).unwrap();
        let padded = PaddedSignal::from_previous(&[1.0, 2.0]);
        let taps = FilterTaps::new(vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(apply_filter(&adj, &padded, &taps).unwrap(), vec![2.0, 1.0, 0.0]);
    }

    #[test]
    fn exactly_k_shifts() {
        let adj = expand_adjacency(&edge(), &AttachmentVector::new(vec![1.0, 0.0])).unwrap();
        let padded = PaddedSignal::from_previous(&[1.0, 2.0]);
        for order in 1..=5 {
            let mut counter = ShiftCounter::default();
            apply_filter_counted(&adj, &padded, &FilterTaps::zeros(order), &mut counter).unwrap();
            assert_eq!(counter.0, order);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let padded = PaddedSignal::from_previous(&[1.0, 2.0, 3.0]);
        assert!(apply_filter(&edge(), &padded, &FilterTaps::zeros(3)).is_err());
        assert!(predict_incoming(&edge(), &AttachmentVector::zeros(3), &[1.0, 2.0], &FilterTaps::zeros(3)).is_err());
    }

    #[test]
    fn prediction_examples() {
        let taps = FilterTaps::new(vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let x = [1.0, 2.0];
        let isolated = predict_incoming(&edge(), &AttachmentVector::zeros(2), &x, &taps).unwrap();
        assert_eq!(isolated, 0.0);
        let only_h0 = FilterTaps::new(vec![3.7, 0.0, 0.0, 0.0]).unwrap();
        let a = AttachmentVector::new(vec![1.0, 0.0]);
        assert_eq!(predict_incoming(&edge(), &a, &x, &only_h0).unwrap(), 0.0);
        assert_eq!(predict_incoming(&edge(), &a, &x, &taps).unwrap(), 1.0);
    }

    #[test]
    fn loss_examples() {
        assert_eq!(prediction_loss(3.0, 3.0), 0.0);
        assert_eq!(prediction_loss(0.0, 2.0), 4.0);
        assert_eq!(prediction_loss(-1.0, 1.0), 4.0);
    }

    #[test]
    fn filter_is_linear_in_signal() {
        let adj = AdjacencyMatrix::from_edges(
            5,
            &[(0, 1, 0.3), (1, 2, 1.2), (2, 3, 0.7), (3, 0, 2.0), (1, 3, 0.4), (4, 2, 0.9)],
        )
        .unwrap();
        let padded = PaddedSignal::from_previous(&[0.2, -1.0, 0.5, 1.5]);
        let taps = FilterTaps::new(vec![0.1, -0.4, 0.3, 0.05]).unwrap();
        let base = apply_filter(&adj, &padded, &taps).unwrap();
        let scaled = apply_filter(&adj, &padded.scaled(-2.5), &taps).unwrap();
        for (b, s) in base.iter().zip(&scaled) {
            assert!((s - (-2.5) * b).abs() < 1e-12);
        }
    }
}
