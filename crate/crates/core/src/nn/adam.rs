use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam with bias correction over a fixed list of parameter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(shapes: &[usize], learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(params: &[&[f64]], learning_rate: f64) -> Self {
        let shapes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        Self::new(&shapes, learning_rate)
    }

    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::dim(self.first_moment.len(), params.len(), "adam parameter arrays"));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::dim(m.len(), p.len().max(g.len()), "adam parameter array"));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let lr = self.learning_rate;
        let eps = self.epsilon;
        for (idx, p) in params.iter_mut().enumerate() {
            let g = grads[idx];
            let m = &mut self.first_moment[idx];
            let v = &mut self.second_moment[idx];
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_weights() {
        let mut w = vec![0.3, -1.2];
        let mut adam = AdamState::new(&[2], 1e-3);
        adam.update(&mut [w.as_mut_slice()], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(w, vec![0.3, -1.2]);
    }

    #[test]
    fn constant_gradient_step_approaches_learning_rate() {
        let lr = 1e-3;
        let mut w = vec![0.0];
        let mut adam = AdamState::new(&[1], lr);
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = w[0];
            adam.update(&mut [w.as_mut_slice()], &[&[3.7]]).unwrap();
            last = before - w[0];
        }
        assert!((last - lr).abs() < 1e-9 * 1e3 * lr, "{last}");
        // first step is exactly lr * g / (|g| + eps)
        let mut w = vec![0.0];
        let mut adam = AdamState::new(&[1], lr);
        adam.update(&mut [w.as_mut_slice()], &[&[3.7]]).unwrap();
        assert!((w[0] + lr * 3.7 / (3.7 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn deterministic_trajectories() {
        let run = || {
            let mut w = vec![1.0, 2.0];
            let mut adam = AdamState::new(&[2], 1e-2);
            for i in 0..100 {
                let g = [w[0] * 0.5 + i as f64 * 1e-3, -w[1]];
                adam.update(&mut [w.as_mut_slice()], &[&g]).unwrap();
            }
            w
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch() {
        let mut w = vec![0.0; 3];
        let mut adam = AdamState::new(&[2], 1e-3);
        assert!(adam.update(&mut [w.as_mut_slice()], &[&[0.0; 3]]).is_err());
    }
}
