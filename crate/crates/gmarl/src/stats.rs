//! Small statistics used by experiment summaries.

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Trailing moving average; the first `window - 1` points average over
/// what is available.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        if i >= window {
            acc -= values[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

/// `ln C(n, k)` via log-gamma-free summation (n is a run count, small).
fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

/// Paired sign test. Returns `(wins of a, wins of b, one-sided p-value for
/// "a smaller than b")`; ties are dropped.
pub fn sign_test(a: &[f64], b: &[f64]) -> (usize, usize, f64) {
    let (mut wins, mut losses) = (0usize, 0usize);
    for (x, y) in a.iter().zip(b) {
        if x < y {
            wins += 1;
        } else if x > y {
            losses += 1;
        }
    }
    let n = (wins + losses) as u64;
    if n == 0 {
        return (0, 0, 1.0);
    }
    // P(X >= wins), X ~ Binomial(n, 1/2)
    let p: f64 = (wins as u64..=n)
        .map(|k| (ln_choose(n, k) - n as f64 * std::f64::consts::LN_2).exp())
        .sum();
    (wins, losses, p.min(1.0))
}
