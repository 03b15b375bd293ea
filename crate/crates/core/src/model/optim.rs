//! Plain SGD (used for probing) and bias-corrected Adam (pretraining).

use super::ModelError;
use crate::scalar::Scalar;

fn check_aligned<S: Scalar>(params: &[S], grads: &[S]) -> Result<(), ModelError> {
    if params.len() != grads.len() {
        return Err(ModelError::ParamCount {
            expected: params.len(),
            found: grads.len(),
        });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(ModelError::NonFiniteGradient { index: i });
    }
    Ok(())
}

/// `theta <- theta - lr * g`.
pub fn sgd_step<S: Scalar>(params: &mut [S], grads: &[S], lr: S) -> Result<(), ModelError> {
    check_aligned(params, grads)?;
    for (p, &g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// SGD restricted to the sorted index set `mask`; all other entries are
/// left untouched.
pub fn masked_sgd_step<S: Scalar>(params: &mut [S], grads: &[S], mask: &[usize], lr: S) -> Result<(), ModelError> {
    check_aligned(params, grads)?;
    for &i in mask {
        params[i] -= lr * grads[i];
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub m: Vec<S>,
    pub v: Vec<S>,
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
            t: 0,
        }
    }
}

pub fn adam_step<S: Scalar>(
    params: &mut [S],
    grads: &[S],
    state: &mut AdamState<S>,
    hp: AdamParams,
    lr: S,
) -> Result<(), ModelError> {
    check_aligned(params, grads)?;
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(ModelError::ParamCount {
            expected: params.len(),
            found: state.m.len(),
        });
    }
    state.t += 1;
    let (b1, b2, eps) = (S::of(hp.beta1), S::of(hp.beta2), S::of(hp.eps));
    let one = S::one();
    let t = state.t as i32;
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_hand_case() {
        let mut p: Vec<f64> = vec![1.0, 1.0];
        sgd_step(&mut p, &[0.5, -0.5], 0.1).unwrap();
        assert!((p[0] - 0.95).abs() < 1e-15 && (p[1] - 1.05).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p: Vec<f64> = vec![0.3, -2.0];
        sgd_step(&mut p, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(p, vec![0.3, -2.0]);
        let mut st = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut st, AdamParams::default(), 0.1).unwrap();
        assert_eq!(p, vec![0.3, -2.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // m_hat = 1, v_hat = 1 at t = 1 so the update is lr / (1 + eps).
        let mut p: Vec<f64> = vec![0.0];
        let mut st = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut st, AdamParams::default(), 0.01).unwrap();
        assert!((p[0] + 0.01 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn masked_step_touches_only_mask() {
        let mut p: Vec<f64> = vec![1.0, 1.0, 1.0];
        masked_sgd_step(&mut p, &[0.5, 2.0, 0.1], &[0, 2], 0.1).unwrap();
        assert_eq!(p[1], 1.0);
        assert!((p[0] - 0.95).abs() < 1e-15 && (p[2] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p: Vec<f64> = vec![1.0, 1.0];
        assert!(matches!(
            sgd_step(&mut p, &[0.0, f64::INFINITY], 0.1),
            Err(ModelError::NonFiniteGradient { index: 1 })
        ));
        assert_eq!(p, vec![1.0, 1.0]);
    }
}
