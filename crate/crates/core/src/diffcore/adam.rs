use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for one parameter list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Tensor], config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    /// One bias-corrected Adam descent step, `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::shape(
                format!("{} parameter tensors", self.first.len()),
                format!("{} params / {} grads", params.len(), grads.len()),
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.len() != m.len() || g.shape() != p.shape() {
                return Err(Error::shape(
                    format!("{:?}", p.shape()),
                    format!("{:?}", g.shape()),
                ));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::row(vec![1.0, -2.0, 0.5])];
        let mut s = AdamState::new(&p, AdamConfig::default());
        let g = vec![Tensor::row(vec![3.0, -0.2, 1e-3])];
        s.update(&mut p, &g, 0.01).unwrap();
        let expected = [1.0 - 0.01, -2.0 + 0.01, 0.5 - 0.01];
        for (a, b) in p[0].data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = vec![Tensor::row(vec![1.0, 2.0])];
        let mut s = AdamState::new(&p, AdamConfig::default());
        for _ in 0..100 {
            s.update(&mut p, &[Tensor::zeros(1, 2)], 0.1).unwrap();
        }
        assert_eq!(p[0].data(), &[1.0, 2.0]);
    }

    #[test]
    fn two_steps_match_scalar_trace() {
        // Hand computation with g = 1, lr = 0.1, beta1 = 0.9, beta2 = 0.999:
        // t=1: m=0.1, v=0.001, m_hat=1, v_hat=1 -> p = 1 - 0.1/(1+1e-8)
        // t=2: m=0.19, v=0.001999, m_hat=0.19/0.19=1, v_hat=0.001999/0.001999=1
        let mut p = vec![Tensor::scalar(1.0)];
        let mut s = AdamState::new(&p, AdamConfig::default());
        let g = [Tensor::scalar(1.0)];
        s.update(&mut p, &g, 0.1).unwrap();
        let p1 = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p[0].item() - p1).abs() < 1e-15);
        s.update(&mut p, &g, 0.1).unwrap();
        let p2 = p1 - 0.1 / (1.0 + 1e-8);
        assert!((p[0].item() - p2).abs() < 1e-14);
        assert_eq!(s.step, 2);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![Tensor::row(vec![1.0, 2.0])];
        let mut s = AdamState::new(&p, AdamConfig::default());
        assert!(s.update(&mut p, &[Tensor::zeros(2, 1)], 0.1).is_err());
    }
}
