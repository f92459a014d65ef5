use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of the bias-corrected adaptive-moment optimiser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdamOutcome {
    Applied,
    /// The gradient had a NaN or infinite entry; nothing was changed except the
    /// `diverged` flag.
    SkippedNonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub config: AdamConfig,
    pub diverged: bool,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            config,
            diverged: false,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<AdamOutcome> {
        if params.len() != self.first_moment.len() {
            return Err(Error::dim("adam params", self.first_moment.len(), params.len()));
        }
        if grad.len() != params.len() {
            return Err(Error::dim("adam gradient", params.len(), grad.len()));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            self.diverged = true;
            return Ok(AdamOutcome::SkippedNonFinite);
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = flush(beta1 * *m + (1.0 - beta1) * g);
            *v = flush(beta2 * *v + (1.0 - beta2) * g * g);
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(AdamOutcome::Applied)
    }
}

/// Moments below this only keep decaying under a zero gradient; flushing them
/// to zero keeps the update loop out of subnormal arithmetic.
const MOMENT_FLUSH: f64 = 1e-200;

#[inline]
fn flush(x: f64) -> f64 {
    if x.abs() < MOMENT_FLUSH { 0.0 } else { x }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut st = AdamState::new(3, AdamConfig::default());
        let mut p = vec![1.0, -2.0, 0.5];
        st.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn first_step_is_lr_times_gradient_sign() {
        // m̂ = g, v̂ = g², so Δ = -lr·g/(|g| + eps)
        let cfg = AdamConfig::with_lr(0.01);
        let mut st = AdamState::new(2, cfg);
        let mut p = vec![0.0, 0.0];
        let g = [0.5, -4.0];
        st.step(&mut p, &g).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let expected = -0.01 * gi / (gi.abs() + 1e-8);
            assert!((pi - expected).abs() < 1e-15, "{pi} vs {expected}");
        }
    }

    #[test]
    fn decayed_moments_flush_to_zero() {
        let mut st = AdamState::new(1, AdamConfig::default());
        let mut p = vec![0.0];
        st.step(&mut p, &[1.0]).unwrap();
        for _ in 0..500_000 {
            st.step(&mut p, &[0.0]).unwrap();
        }
        assert_eq!((st.first_moment[0], st.second_moment[0]), (0.0, 0.0));
    }

    #[test]
    fn zero_lr_is_inert() {
        let mut st = AdamState::new(2, AdamConfig::with_lr(0.0));
        let mut p = vec![3.0, 4.0];
        for _ in 0..5 {
            st.step(&mut p, &[1.0, -1.0]).unwrap();
        }
        assert_eq!(p, vec![3.0, 4.0]);
    }

    #[test]
    fn non_finite_gradient_flags_and_skips() {
        let mut st = AdamState::new(2, AdamConfig::default());
        let mut p = vec![1.0, 1.0];
        let out = st.step(&mut p, &[f64::NAN, 1.0]).unwrap();
        assert_eq!(out, AdamOutcome::SkippedNonFinite);
        assert!(st.diverged);
        assert_eq!(st.step_count, 0);
        assert_eq!(p, vec![1.0, 1.0]);
        assert!(st.first_moment.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let mut st = AdamState::new(2, AdamConfig::default());
        assert!(st.step(&mut [0.0; 3], &[0.0; 3]).is_err());
        assert!(st.step(&mut [0.0; 2], &[0.0; 1]).is_err());
    }
}
