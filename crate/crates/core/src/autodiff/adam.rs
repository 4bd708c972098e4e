use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Bias-corrected Adam with per-parameter first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} params, {} grads, {} moments", params.len(), grads.len(), self.m.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.len() != self.m[i].len() {
                return Err(Error::shape(
                    "adam_step",
                    format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps, wd) = (T::of(c.lr), T::of(c.eps), T::of(c.weight_decay));
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((theta, &grad), mi), vi) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut())
            {
                let grad = grad + wd * *theta;
                *mi = b1 * *mi + (T::one() - b1) * grad;
                *vi = b2 * *vi + (T::one() - b2) * grad * grad;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::<f64>::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap()];
        let g = vec![Tensor::zeros(&[1, 3])];
        let mut st = AdamState::new(AdamConfig::default(), &p);
        st.step(&mut p, &g).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0, 0.5]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn weight_decay_alone_moves_params() {
        let mut p = vec![Tensor::<f64>::matrix(1, 1, vec![2.0]).unwrap()];
        let g = vec![Tensor::zeros(&[1, 1])];
        let cfg = AdamConfig {
            weight_decay: 0.1,
            lr: 0.01,
            ..Default::default()
        };
        let mut st = AdamState::new(cfg, &p);
        st.step(&mut p, &g).unwrap();
        assert!(p[0].data()[0] < 2.0);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        // m̂ = g and v̂ = g² after one step, so the update is lr·g/(|g|+ε)
        for g in [0.3, -7.0, 1e-3] {
            let mut p = vec![Tensor::<f64>::scalar(1.0)];
            let mut st = AdamState::new(AdamConfig { lr: 0.05, ..Default::default() }, &p);
            st.step(&mut p, &[Tensor::scalar(g)]).unwrap();
            let expected = 1.0 - 0.05 * g / (g.abs() + 1e-8);
            assert!((p[0].item() - expected).abs() < 1e-15, "g = {g}");
            assert!(((1.0 - p[0].item()).abs() - 0.05).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_state_identical_update() {
        let p0 = vec![Tensor::<f64>::matrix(2, 1, vec![0.3, 0.4]).unwrap()];
        let g = vec![Tensor::matrix(2, 1, vec![0.1, -0.2]).unwrap()];
        let mut st = AdamState::new(AdamConfig::default(), &p0);
        let (mut a, mut b) = (p0.clone(), p0.clone());
        let mut st2 = st.clone();
        st.step(&mut a, &g).unwrap();
        st2.step(&mut b, &g).unwrap();
        assert_eq!(a, b);
        assert_eq!(st, st2);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![Tensor::<f64>::zeros(&[2, 2])];
        let mut st = AdamState::new(AdamConfig::default(), &p);
        assert!(st.step(&mut p, &[Tensor::zeros(&[2, 3])]).is_err());
    }
}
