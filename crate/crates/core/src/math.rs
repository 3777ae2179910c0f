//! Numerically stable scalar helpers shared by the loss functions.

/// Logistic function. Evaluated so that `sigmoid(x) + sigmoid(-x) == 1.0`
/// holds exactly in floating point.
pub fn sigmoid(x: f64) -> f64 {
    if x < 0.0 {
        let e = x.exp();
        e / (1.0 + e)
    } else {
        let e = (-x).exp();
        1.0 - e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln σ(x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Writes `log_softmax(logits)` into `out`.
pub fn log_softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    let log_z = max + sum.ln();
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = z - log_z;
    }
}

/// Writes `softmax(logits)` into `out`.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3.0) - 0.952_574_126_822_433_4).abs() < 1e-15);
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
    }

    #[test]
    fn sigmoid_complement_is_exact() {
        for &x in &[1e-300, 1e-17, 0.1, 0.5, 1.0, 3.0, 17.3, 36.9, 40.0, 500.0] {
            assert_eq!(sigmoid(x) + sigmoid(-x), 1.0, "x = {x}");
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((log_sigmoid(20.0) - (-2.061_153_620_314_380_7e-9)).abs() < 1e-20);
    }

    #[test]
    fn log_softmax_normalizes() {
        let z = [2.0, 1.0, 0.0, -1.0];
        let mut out = [0.0; 4];
        log_softmax_into(&z, &mut out);
        let total: f64 = out.iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }
}
