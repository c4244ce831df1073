//! Bias-corrected Adam.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Zero moments with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(params: &[Tensor]) -> Self {
        Self::with_constants(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_constants(params: &[Tensor], beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            first_moment: zeros(),
            second_moment: zeros(),
            step_count: 0,
            beta1,
            beta2,
            epsilon,
        }
    }
}

/// One Adam update. Nothing is modified when validation fails.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::config("learning rate must be positive"));
    }
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::shape("adam_step", &[params.len()], &[grads.len()]));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first_moment[i].shape() {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite {
                op: alloc::format!("adam_step gradient {i}"),
            });
        }
    }

    state.step_count += 1;
    let t = state.step_count as f64;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - math::pow(b1, t);
    let c2 = 1.0 - math::pow(b2, t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        let moments = m.data_mut().iter_mut().zip(v.data_mut().iter_mut());
        for ((pv, &gv), (mv, vv)) in p.data_mut().iter_mut().zip(g.data()).zip(moments) {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= lr * m_hat / (math::sqrt(v_hat) + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = [Tensor::scalar(0.0)];
        let g = [Tensor::scalar(1.0)];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 0.001).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p[0].item() - expected).abs() < 1e-15);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = [Tensor::row(&[1.5, -2.0])];
        let g = [Tensor::zeros([1, 2])];
        let mut s = AdamState::new(&p);
        for _ in 0..10 {
            adam_step(&mut p, &g, &mut s, 0.01).unwrap();
        }
        assert_eq!(p[0].data(), &[1.5, -2.0]);
    }

    #[test]
    fn two_constant_steps_match_hand_recurrence() {
        // Scalar hand-roll of the recurrences for g = 1.
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.001);
        let (mut m, mut v, mut x) = (0.0, 0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1);
            v = b2 * v + (1.0 - b2);
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((x + 0.002).abs() < 1e-6);

        let mut p = [Tensor::scalar(0.0)];
        let g = [Tensor::scalar(1.0)];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, lr).unwrap();
        adam_step(&mut p, &g, &mut s, lr).unwrap();
        assert!((p[0].item() - x).abs() < 1e-15);
        assert!((p[0].item() + 0.002).abs() < 1e-6);
    }

    #[test]
    fn nan_gradient_aborts_without_mutation() {
        let mut p = [Tensor::scalar(1.0)];
        let g = [Tensor::scalar(f64::NAN)];
        let mut s = AdamState::new(&p);
        assert!(adam_step(&mut p, &g, &mut s, 0.001).is_err());
        assert_eq!(p[0].item(), 1.0);
        assert_eq!(s.step_count, 0);
    }

    #[test]
    fn rejects_non_positive_lr() {
        let mut p = [Tensor::scalar(1.0)];
        let g = [Tensor::scalar(1.0)];
        let mut s = AdamState::new(&p);
        assert!(adam_step(&mut p, &g, &mut s, 0.0).is_err());
    }
}
