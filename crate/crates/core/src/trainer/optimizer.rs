//! AdamW with decoupled weight decay, cosine learning-rate schedule, and
//! global-norm gradient clipping.

use crate::autodiff::Tensor;
use crate::scalar::Scalar;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Cosine annealing from lr_max at step 0 to lr_min at total_steps.
pub fn cosine_lr<T: Scalar>(step: usize, total_steps: usize, lr_max: T, lr_min: T) -> T {
    debug_assert!(step <= total_steps);
    let phase = std::f64::consts::PI * step as f64 / total_steps.max(1) as f64;
    let blend = 0.5 * (1.0 + phase.cos());
    lr_min + (lr_max - lr_min) * T::from_f64(blend)
}

/// Global l2 norm over a gradient set.
pub fn global_norm<T: Scalar>(grads: &[Tensor<T>]) -> T {
    let total: T = grads
        .iter()
        .flat_map(|g| g.data().iter().map(|&v| v * v))
        .sum();
    total.sqrt()
}

/// Scale all gradients down so the global norm is at most `max_norm`.
/// Returns the pre-clip norm. Never scales up.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: T) -> T {
    let norm = global_norm(grads);
    if norm > max_norm && norm > T::zero() {
        let scale = max_norm / norm;
        for g in grads {
            for v in g.data_mut() {
                *v = *v * scale;
            }
        }
    }
    norm
}

/// First/second moment accumulators plus the step counter; weight decay is
/// decoupled, so a zero-gradient step shrinks parameters by exactly
/// lr * weight_decay * theta.
#[derive(Debug, Clone)]
pub struct OptimizerState<T: Scalar> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: usize,
    pub weight_decay: T,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &[Tensor<T>], weight_decay: T) -> Self {
        let zeros: Vec<Tensor<T>> = params
            .iter()
            .map(|p| Tensor::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            weight_decay,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One AdamW update in place. Moment estimates are bias-corrected by
    /// the step counter.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: T) {
        debug_assert_eq!(params.len(), grads.len());
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64(BETA1);
        let b2 = T::from_f64(BETA2);
        let eps = T::from_f64(EPS);
        let corr1 = T::one() - b1.powi(t);
        let corr2 = T::one() - b2.powi(t);
        for i in 0..params.len() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params[i].data_mut();
            for j in 0..p.len() {
                // Decoupled decay, applied directly to the parameter.
                p[j] = p[j] - lr * self.weight_decay * p[j];
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let m_hat = m[j] / corr1;
                let v_hat = v[j] / corr2;
                p[j] = p[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_abs_diff_eq!(cosine_lr(0, 100, 1e-3, 1e-6), 1e-3, epsilon = 1e-18);
        assert_abs_diff_eq!(cosine_lr(100, 100, 1e-3, 1e-6), 1e-6, epsilon = 1e-18);
        assert_abs_diff_eq!(
            cosine_lr(50, 100, 1e-3, 1e-6),
            (1e-3 + 1e-6) / 2.0,
            epsilon = 1e-18
        );
    }

    #[test]
    fn cosine_is_monotone_decreasing() {
        let mut prev = f64::INFINITY;
        for step in 0..=200 {
            let lr = cosine_lr(step, 200, 1e-2, 1e-5);
            assert!(lr < prev);
            prev = lr;
        }
    }

    #[test]
    fn zero_gradient_step_is_pure_weight_decay() {
        let mut params = vec![Tensor::from_rows(&[vec![2.0, -4.0], vec![1.0, 0.5]]).unwrap()];
        let grads = vec![Tensor::zeros(2, 2)];
        let before = params[0].clone();
        let (lr, wd) = (1e-2, 1e-1);
        let mut opt = OptimizerState::new(&params, wd);
        opt.step(&mut params, &grads, lr);
        for (a, &b) in params[0].data().iter().zip(before.data()) {
            assert_abs_diff_eq!(*a, b - lr * wd * b, epsilon = 1e-16);
        }
    }

    #[test]
    fn clip_reduces_but_never_increases_norm() {
        let mut grads = vec![Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap()];
        let pre = clip_global_norm(&mut grads, 1.0);
        assert_abs_diff_eq!(pre, 5.0, epsilon = 1e-14);
        assert_abs_diff_eq!(global_norm(&grads), 1.0, epsilon = 1e-14);

        let mut small = vec![Tensor::from_rows(&[vec![0.3, 0.4]]).unwrap()];
        let pre = clip_global_norm(&mut small, 1.0);
        assert_abs_diff_eq!(pre, 0.5, epsilon = 1e-14);
        // Untouched below the threshold.
        assert_eq!(small[0].data(), &[0.3, 0.4]);
    }

    #[test]
    fn adamw_descends_a_quadratic() {
        // Minimize f(x) = (x - 3)^2 by hand-fed gradients.
        let mut params = vec![Tensor::scalar(0.0)];
        let mut opt = OptimizerState::new(&params, 0.0);
        for _ in 0..2000 {
            let x = params[0].item();
            let grads = vec![Tensor::scalar(2.0 * (x - 3.0))];
            opt.step(&mut params, &grads, 1e-2);
        }
        assert_abs_diff_eq!(params[0].item(), 3.0, epsilon = 1e-3);
    }
}
