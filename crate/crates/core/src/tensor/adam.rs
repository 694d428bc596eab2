//! Adam with bias correction.

use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: one pair of moment buffers per parameter, in the order
/// the parameters are passed to [`AdamState::step`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Applies one update with learning rate `lr` and returns the new parameters.
    /// A parameter without a gradient is treated as having a zero gradient.
    pub fn step(&mut self, params: &[Tensor], grads: &[Option<Vec<f64>>], lr: f64) -> Result<Vec<Tensor>> {
        if params.len() != grads.len() {
            return Err(TensorError::Invalid(format!(
                "adam: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(TensorError::Invalid(format!(
                "adam: state tracks {} parameters, got {}",
                self.first.len(),
                params.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            let glen = g.as_ref().map_or(p.numel(), Vec::len);
            if m.len() != p.numel() || glen != p.numel() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: vec![glen, m.len()],
                });
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut out = Vec::with_capacity(params.len());
        for (i, p) in params.iter().enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let mut data = p.to_vec();
            if let Some(g) = &grads[i] {
                for j in 0..data.len() {
                    m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                    v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                    let mhat = m[j] / bc1;
                    let vhat = v[j] / bc2;
                    data[j] -= lr * mhat / (vhat.sqrt() + eps);
                }
            } else {
                for j in 0..data.len() {
                    m[j] *= beta1;
                    v[j] *= beta2;
                    data[j] -= lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
                }
            }
            out.push(p.with_data(data)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let p = Tensor::param(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut st = AdamState::new(AdamConfig::default());
        let out = st.step(&[p.clone()], &[Some(vec![0.0; 3])], 1e-4).unwrap();
        assert_eq!(out[0].data(), p.data());
    }

    #[test]
    fn single_step_matches_closed_form() {
        let p = Tensor::param(&[], vec![1.0]).unwrap();
        let mut st = AdamState::new(AdamConfig::default());
        let out = st.step(&[p], &[Some(vec![0.5])], 1e-4).unwrap();
        // m = 0.05, v = 0.00025; mhat = 0.5, vhat = 0.25
        let expect = 1.0 - 1e-4 * 0.5 / (0.5 + 1e-8);
        assert!((out[0].item() - expect).abs() < 1e-15);
    }

    #[test]
    fn first_step_is_linear_in_learning_rate() {
        let p = Tensor::param(&[2], vec![0.3, -0.7]).unwrap();
        let g = vec![Some(vec![0.2, -1.3])];
        let a = AdamState::new(AdamConfig::default())
            .step(&[p.clone()], &g, 1e-3)
            .unwrap();
        let b = AdamState::new(AdamConfig::default())
            .step(&[p.clone()], &g, 1e-4)
            .unwrap();
        for j in 0..2 {
            let da = a[0].data()[j] - p.data()[j];
            let db = b[0].data()[j] - p.data()[j];
            assert!((db - 0.1 * da).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let p = Tensor::param(&[3], vec![0.0; 3]).unwrap();
        let mut st = AdamState::new(AdamConfig::default());
        assert!(st.step(&[p], &[Some(vec![0.0; 2])], 1e-3).is_err());
    }
}
