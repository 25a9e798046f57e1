//! Adam with bias-corrected moment estimates over a flat parameter vector.

use serde::{Deserialize, Serialize};

use crate::error::{Result, UdeError};

pub const DEFAULT_LR: f64 = 0.005;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

pub fn adam_init(param_len: usize, lr: f64) -> Result<AdamState> {
    if param_len == 0 {
        return Err(UdeError::Validation("parameter vector is empty".into()));
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(UdeError::Validation(format!("learning rate must be positive, got {lr}")));
    }
    Ok(AdamState {
        m: vec![0.0; param_len],
        v: vec![0.0; param_len],
        step_count: 0,
        lr,
        beta1: DEFAULT_BETA1,
        beta2: DEFAULT_BETA2,
        eps: DEFAULT_EPS,
    })
}

impl AdamState {
    /// Applies one update to `theta` in place.
    pub fn step_in_place(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if theta.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(UdeError::Shape(format!(
                "optimizer holds {} moments, got theta {} and grad {}",
                self.m.len(),
                theta.len(),
                grad.len()
            )));
        }
        if let Some(g) = grad.iter().find(|g| !g.is_finite()) {
            return Err(UdeError::Domain(format!("non-finite gradient entry {g}")));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for j in 0..theta.len() {
            let g = grad[j];
            self.m[j] = self.beta1 * self.m[j] + (1.0 - self.beta1) * g;
            self.v[j] = self.beta2 * self.v[j] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[j] / bias1;
            let v_hat = self.v[j] / bias2;
            theta[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Functional form: returns the advanced state and updated parameters.
pub fn adam_step(state: &AdamState, theta: &[f64], grad: &[f64]) -> Result<(AdamState, Vec<f64>)> {
    let mut next = state.clone();
    let mut updated = theta.to_vec();
    next.step_in_place(&mut updated, grad)?;
    Ok((next, updated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn init_defaults() {
        let s = adam_init(337, 0.005).unwrap();
        assert_eq!(s.m, vec![0.0; 337]);
        assert_eq!(s.v, vec![0.0; 337]);
        assert_eq!(s.step_count, 0);
        assert_eq!((s.beta1, s.beta2, s.eps), (0.9, 0.999, 1e-8));
        assert_eq!(s, adam_init(337, 0.005).unwrap());
        assert!(matches!(adam_init(3, 0.0), Err(UdeError::Validation(_))));
        assert!(matches!(adam_init(3, -1.0), Err(UdeError::Validation(_))));
        assert!(matches!(adam_init(0, 0.1), Err(UdeError::Validation(_))));
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let s = adam_init(4, 0.005).unwrap();
        let theta = vec![1.0, -2.0, 3.0, 0.5];
        let (next, out) = adam_step(&s, &theta, &[0.0; 4]).unwrap();
        assert_eq!(out, theta);
        assert_eq!(next.m, vec![0.0; 4]);
        assert_eq!(next.v, vec![0.0; 4]);
        assert_eq!(next.step_count, 1);
    }

    #[test]
    fn two_scalar_steps_match_hand_evaluation() {
        // Reference recurrences evaluated step by step, g = 4 both times.
        let (lr, b1, b2, eps, g) = (0.005, 0.9, 0.999, 1e-8, 4.0_f64);
        let mut m = 0.0;
        let mut v = 0.0;
        let mut theta = 1.0;
        let mut expected = Vec::new();
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - f64::powi(b1, t));
            let vh = v / (1.0 - f64::powi(b2, t));
            theta -= lr * mh / (vh.sqrt() + eps);
            expected.push(theta);
        }
        // first step moves by lr·4/(4 + 1e-8)
        assert!((expected[0] - (1.0 - 0.005 * 4.0 / (4.0 + 1e-8))).abs() < 1e-15);

        let s = adam_init(1, lr).unwrap();
        let (s, th) = adam_step(&s, &[1.0], &[g]).unwrap();
        assert!((th[0] - expected[0]).abs() < 1e-15);
        assert!((s.m[0] - 0.4).abs() < 1e-15);
        assert!((s.v[0] - 0.016).abs() < 1e-15);
        let (s, th) = adam_step(&s, &th, &[g]).unwrap();
        assert!((th[0] - expected[1]).abs() < 1e-15);
        assert_eq!(s.step_count, 2);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = adam_init(2, 0.005).unwrap();
        assert!(matches!(adam_step(&s, &[0.0; 3], &[0.0; 3]), Err(UdeError::Shape(_))));
        assert!(matches!(adam_step(&s, &[0.0; 2], &[1.0, f64::NAN]), Err(UdeError::Domain(_))));
    }

    proptest! {
        #[test]
        fn first_step_has_size_lr(grad in prop::collection::vec(-1e3f64..1e3, 1..40)) {
            prop_assume!(grad.iter().all(|g| g.abs() > 1e-3));
            let lr = 0.005;
            let s = adam_init(grad.len(), lr).unwrap();
            let theta = vec![0.0; grad.len()];
            let (_, out) = adam_step(&s, &theta, &grad).unwrap();
            for (d, g) in out.iter().zip(&grad) {
                prop_assert!(d.abs() <= lr && d.abs() > lr * (1.0 - 1e-4));
                prop_assert!(d.signum() == -g.signum());
            }
        }

        #[test]
        fn first_step_is_scale_free(grad in prop::collection::vec(-10f64..10.0, 1..20), c in 0.1f64..100.0) {
            prop_assume!(grad.iter().all(|g| g.abs() > 1e-2));
            let s = adam_init(grad.len(), 0.005).unwrap();
            let theta = vec![0.0; grad.len()];
            let scaled: Vec<f64> = grad.iter().map(|g| c * g).collect();
            let (_, a) = adam_step(&s, &theta, &grad).unwrap();
            let (_, b) = adam_step(&s, &theta, &scaled).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-8);
            }
        }

        #[test]
        fn step_is_pure(grad in prop::collection::vec(-10f64..10.0, 5)) {
            let s = adam_init(5, 0.005).unwrap();
            let theta = vec![0.3; 5];
            let (s1, a) = adam_step(&s, &theta, &grad).unwrap();
            let (s2, b) = adam_step(&s, &theta, &grad).unwrap();
            prop_assert_eq!(s1, s2);
            prop_assert_eq!(a, b);
        }
    }
}
