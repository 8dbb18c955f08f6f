//! Adam with bias correction.

use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![T::ZERO; len],
            v: vec![T::ZERO; len],
            step: 0,
        }
    }
}

pub fn adam_step<T: Real>(param: &mut [T], grad: &[T], state: &mut AdamState<T>, cfg: &AdamConfig) {
    assert_eq!(param.len(), grad.len(), "adam_step: parameter/gradient length");
    assert_eq!(param.len(), state.m.len(), "adam_step: state length");
    state.step += 1;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let c1 = T::from_f64(1.0 - cfg.beta1.powi(state.step as i32));
    let c2 = T::from_f64(1.0 - cfg.beta2.powi(state.step as i32));
    let lr = T::from_f64(cfg.lr);
    let eps = T::from_f64(cfg.eps);
    for (((p, &g), m), v) in param
        .iter_mut()
        .zip(grad)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (T::ONE - b1) * g;
        *v = b2 * *v + (T::ONE - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut p = vec![1.5f64, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, &AdamConfig::default());
        assert_eq!(p, vec![1.5, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = vec![0.0f64; 3];
        let mut s = AdamState::new(3);
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        adam_step(&mut p, &[3.0, -0.2, 1e-3], &mut s, &cfg);
        assert!((p[0] + 0.01).abs() < 1e-6);
        assert!((p[1] - 0.01).abs() < 1e-6);
        assert!((p[2] + 0.01).abs() < 1e-4);
    }

    #[test]
    fn descends_on_quadratic() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut w = vec![1.0f64];
        let mut s = AdamState::new(1);
        let mut prev = w[0].abs();
        for _ in 0..10 {
            let g = [2.0 * w[0]];
            adam_step(&mut w, &g, &mut s, &cfg);
            assert!(w[0].abs() < prev);
            prev = w[0].abs();
        }
        assert_eq!(s.step, 10);
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let cfg = AdamConfig {
            lr: 0.0,
            ..Default::default()
        };
        let mut w = vec![0.25f32, 4.0];
        let mut s = AdamState::new(2);
        for _ in 0..5 {
            adam_step(&mut w, &[1.0, -3.0], &mut s, &cfg);
        }
        assert_eq!(w, vec![0.25, 4.0]);
    }
}
