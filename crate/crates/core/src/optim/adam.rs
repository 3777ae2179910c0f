use super::Parameters;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay; zero disables it.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn for_params<P: Parameters>(p: &P) -> Self {
        Self::new(p.values().len())
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }
}

/// Bias-corrected Adam update of `params` in place.
pub fn adam_step<P: Parameters>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<()> {
    let n = params.values().len();
    if grads.values().len() != n || state.m.len() != n {
        return Err(Error::input(format!(
            "shape mismatch: params {n}, grads {}, state {}",
            grads.values().len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let values = params.values_mut();
    for i in 0..n {
        let g = grads.values()[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        if cfg.weight_decay > 0.0 {
            values[i] -= lr * cfg.weight_decay * values[i];
        }
        values[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug, PartialEq)]
    struct Flat(Vec<f64>);

    impl Parameters for Flat {
        fn values(&self) -> &[f64] {
            &self.0
        }
        fn values_mut(&mut self) -> &mut [f64] {
            &mut self.0
        }
        fn zeros_like(&self) -> Self {
            Flat(vec![0.0; self.0.len()])
        }
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = Flat(vec![1.0, -2.0]);
        let mut s = AdamState::new(2);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &Flat(vec![1.0, 1.0]), &mut s, &cfg, 0.1).unwrap();
        let before = p.clone();
        let m_before = s.first_moment().to_vec();
        adam_step(&mut p, &Flat(vec![0.0, 0.0]), &mut s, &cfg, 0.0).unwrap();
        assert_eq!(p, before);
        for (a, b) in s.first_moment().iter().zip(&m_before) {
            assert!(a.abs() < b.abs());
        }

        let mut fresh = Flat(vec![3.0]);
        let mut s = AdamState::new(1);
        adam_step(&mut fresh, &Flat(vec![0.0]), &mut s, &cfg, 0.1).unwrap();
        assert_eq!(fresh.0, vec![3.0]);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+ε) ≈ lr.
        let mut p = Flat(vec![0.5]);
        let mut s = AdamState::new(1);
        adam_step(&mut p, &Flat(vec![1.0]), &mut s, &AdamConfig::default(), 0.1).unwrap();
        let expect = 0.5 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.0[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn runs_are_bit_identical() {
        let run = || {
            let mut p = Flat(vec![0.1, 0.2, 0.3]);
            let mut s = AdamState::new(3);
            for k in 0..20 {
                let g = Flat(vec![(k as f64).sin(), 0.3, -(k as f64) * 0.01]);
                adam_step(&mut p, &g, &mut s, &AdamConfig::default(), 0.01).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = Flat(vec![0.0; 2]);
        let mut s = AdamState::new(2);
        assert!(adam_step(&mut p, &Flat(vec![0.0; 3]), &mut s, &AdamConfig::default(), 0.1).is_err());
    }
}
