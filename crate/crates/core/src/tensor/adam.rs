use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
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

impl AdamConfig {
    pub fn with_lr(lr: Real) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad Adam hyperparameters {self:?}")))
        }
    }
}

/// Bias-corrected Adam moments for one parameter array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Real>,
    pub v: Vec<Real>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One Adam step. Rejects non-finite gradients before touching any state.
    ///
    /// A gradient that is zero everywhere advances the moments and the step
    /// counter but leaves `params` untouched.
    pub fn step(&mut self, params: &mut [Real], grads: &[Real]) -> Result<()> {
        self.config.validate()?;
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape("adam_step", &[params.len(), grads.len()], &[self.m.len()]));
        }
        if let Some(pos) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {pos} = {}", grads[pos])));
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let frozen = grads.iter().all(|&g| g == 0.0);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            if frozen {
                continue;
            }
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_closed_form() {
        let cfg = AdamConfig::default();
        let grads = [0.5, -2.0, 1e-3, 7.0];
        let mut params = [1.0, 2.0, 3.0, 4.0];
        let start = params;
        let mut st = AdamState::new(4, cfg);
        st.step(&mut params, &grads).unwrap();
        for i in 0..4 {
            let expected = start[i] - cfg.lr * grads[i] / (grads[i].abs() + cfg.eps);
            assert!((params[i] - expected).abs() <= 4.0 * Real::EPSILON * expected.abs(), "{i}");
        }
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut params = [1.0, -1.0];
        let mut st = AdamState::new(2, AdamConfig::default());
        st.step(&mut params, &[0.3, 0.3]).unwrap();
        let before = params;
        st.step(&mut params, &[0.0, 0.0]).unwrap();
        assert_eq!(params, before);
        assert_eq!(st.t, 2);
    }

    #[test]
    fn second_step_no_larger_than_first() {
        let g = [0.25, -3.0, 1e-6];
        let mut params = [0.0; 3];
        let mut st = AdamState::new(3, AdamConfig::default());
        st.step(&mut params, &g).unwrap();
        let d1 = params;
        st.step(&mut params, &g).unwrap();
        for i in 0..3 {
            let d2 = params[i] - d1[i];
            assert!(d2.abs() <= d1[i].abs() * (1.0 + 1e-6));
        }
    }

    #[test]
    fn non_finite_gradient_rejected_without_side_effects() {
        let mut params = [1.0, 2.0];
        let mut st = AdamState::new(2, AdamConfig::default());
        let err = st.step(&mut params, &[1.0, Real::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(params, [1.0, 2.0]);
        assert_eq!(st.t, 0);
        assert!(st.v.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn bad_hyperparameters_rejected() {
        let cfg = AdamConfig {
            beta1: 1.0,
            ..Default::default()
        };
        let mut st = AdamState::new(1, cfg);
        assert!(st.step(&mut [0.0], &[1.0]).is_err());
    }
}
