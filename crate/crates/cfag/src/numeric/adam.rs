//! Bias-corrected Adam update, one state per parameter tensor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

/// First/second moment accumulators for one parameter tensor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
    beta1: T,
    beta2: T,
    epsilon: T,
}

impl<T: Scalar> AdamState<T> {
    /// State with the optimizer's published default constants
    /// (beta1=0.9, beta2=0.999, epsilon=1e-8).
    pub fn new(n_params: usize) -> Self {
        Self::with_constants(n_params, cast(0.9), cast(0.999), cast(1e-8))
    }

    pub fn with_constants(n_params: usize, beta1: T, beta2: T, epsilon: T) -> Self {
        Self {
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            t: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One in-place Adam update of `params` given `grads`.
///
/// Increments the state's step counter and applies the standard
/// bias-corrected rule. Rejects shape mismatches and non-finite gradients.
pub fn adam_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    lr: T,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} parameters", state.m.len()),
            got: format!("{} params / {} grads", params.len(), grads.len()),
        });
    }
    if !grads.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFinite {
            context: "adam gradient".to_string(),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let one = T::one();
    let bc1 = one - state.beta1.powi(t);
    let bc2 = one - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (one - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (one - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_matches_hand_derivation() {
        // With t=1, m_hat = g and v_hat = g^2, so the update is
        // lr * g / (|g| + eps).
        let mut params = vec![1.0_f64];
        let grads = vec![1.0_f64];
        let mut state = AdamState::new(1);
        adam_step(&mut params, &grads, &mut state, 0.001).unwrap();
        let expected_delta = 0.001 * 1.0 / (1.0 + 1e-8);
        assert!((params[0] - (1.0 - expected_delta)).abs() < 1e-15);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![0.3_f64, -0.7];
        let before = params.clone();
        let mut state = AdamState::new(2);
        adam_step(&mut params, &[0.0, 0.0], &mut state, 0.01).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn opposite_gradients_cancel_with_degenerate_moments() {
        // beta1 = beta2 = 0 reduces Adam to sign-scaled SGD, so g then -g
        // returns to the start.
        let mut params = vec![0.5_f64];
        let mut state = AdamState::with_constants(1, 0.0, 0.0, 1e-8);
        adam_step(&mut params, &[2.0], &mut state, 0.01).unwrap();
        adam_step(&mut params, &[-2.0], &mut state, 0.01).unwrap();
        assert!((params[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn deterministic_given_same_inputs() {
        let run = || {
            let mut params = vec![0.1_f64, 0.2, 0.3];
            let mut state = AdamState::new(3);
            for step in 0..10 {
                let g = step as f64 * 0.1 - 0.4;
                adam_step(&mut params, &[g, -g, g * g], &mut state, 0.005).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_shape_mismatch_and_nan() {
        let mut params = vec![0.0_f64; 2];
        let mut state = AdamState::new(2);
        assert!(adam_step(&mut params, &[1.0], &mut state, 0.01).is_err());
        assert!(adam_step(&mut params, &[f64::NAN, 0.0], &mut state, 0.01).is_err());
        // failed calls must not advance the step counter
        assert_eq!(state.step_count(), 0);
    }
}
