use serde::{Deserialize, Serialize};

use crate::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], cfg: &AdamConfig) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(TensorError::Invalid(format!(
                "adam: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[k].shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *w -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
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
        let mut p = vec![Tensor::row(&[1.0, -2.0])];
        let mut s = AdamState::new(&p);
        s.step(&mut p, &[Tensor::zeros(&[1, 2])], &AdamConfig::default()).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let g = [0.3, -4.0, 1e-3];
        let mut p = vec![Tensor::row(&[0.0, 0.0, 0.0])];
        let mut s = AdamState::new(&p);
        s.step(&mut p, &[Tensor::row(&g)], &cfg).unwrap();
        for (w, gi) in p[0].data().iter().zip(g) {
            let expected = -cfg.lr * gi / (gi.abs() + cfg.eps);
            assert!((w - expected).abs() < 1e-15, "{w} vs {expected}");
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(w) = sum_i a_i (w_i - c_i)^2, minimum at c.
        let a = [1.0, 3.0, 0.5];
        let c = [2.0, -1.0, 0.25];
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let mut p = vec![Tensor::row(&[0.0, 0.0, 0.0])];
        let mut s = AdamState::new(&p);
        let mut steps = 0;
        while steps < 5000 {
            let g: Vec<f64> = (0..3).map(|i| 2.0 * a[i] * (p[0].data()[i] - c[i])).collect();
            s.step(&mut p, &[Tensor::row(&g)], &cfg).unwrap();
            steps += 1;
            if p[0].data().iter().zip(c).all(|(w, ci)| (w - ci).abs() < 1e-3) {
                break;
            }
        }
        assert!(steps < 5000, "did not converge");
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let mut p = vec![Tensor::row(&[1.0, 2.0])];
        let mut s = AdamState::new(&p);
        assert!(s.step(&mut p, &[Tensor::row(&[1.0])], &AdamConfig::default()).is_err());
    }
}
