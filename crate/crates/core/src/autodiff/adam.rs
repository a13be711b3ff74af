use serde::{Deserialize, Serialize};

use crate::autodiff::params::ParamSet;
use crate::autodiff::tape::Gradients;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
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

/// Adam with bias-corrected moments, one moment pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, _, p)| Tensor::zeros(p.rows, p.cols))
                .collect::<Vec<_>>()
        };
        Adam {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update. Parameters absent from `grads` are treated as
    /// having zero gradient, so their moments still decay.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::dim("optimizer parameter count", self.m.len(), params.len()));
        }
        for id in params.ids() {
            let p = params.get(id);
            if p.shape() != self.m[id.0].shape() {
                return Err(Error::dim(
                    format!("optimizer moment for `{}`", params.name(id)),
                    format!("{}x{}", self.m[id.0].rows, self.m[id.0].cols),
                    format!("{}x{}", p.rows, p.cols),
                ));
            }
            if let Some(g) = grads.get(id) {
                if g.shape() != p.shape() {
                    return Err(Error::dim(
                        format!("gradient for `{}`", params.name(id)),
                        format!("{}x{}", p.rows, p.cols),
                        format!("{}x{}", g.rows, g.cols),
                    ));
                }
            }
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);

        for id in params.ids() {
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let g = grads.get(id);
            let p = params.get_mut(id);
            for i in 0..p.data.len() {
                let gi = g.map_or(0.0, |g| g.data[i]);
                m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * gi;
                v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                p.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tape::Tape;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = ParamSet::new();
        let x = params.push("x", Tensor::row_vector(vec![1.5, -2.0]));
        let mut opt = Adam::new(AdamConfig::default(), &params);
        let mut grads = Gradients::default();
        grads.insert(x, Tensor::zeros(1, 2));
        for _ in 0..10 {
            opt.step(&mut params, &grads).unwrap();
        }
        assert_eq!(params.get(x).data, vec![1.5, -2.0]);
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        let mut params = ParamSet::new();
        let x = params.push("x", Tensor::row_vector(vec![0.0, 0.0]));
        let mut opt = Adam::new(AdamConfig::default(), &params);
        let mut grads = Gradients::default();
        grads.insert(x, Tensor::row_vector(vec![3.0, -0.5]));
        let mut prev = params.get(x).clone();
        for _ in 0..50 {
            opt.step(&mut params, &grads).unwrap();
            let cur = params.get(x).clone();
            assert!(cur.data[0] < prev.data[0]);
            assert!(cur.data[1] > prev.data[1]);
            prev = cur;
        }
    }

    #[test]
    fn quadratic_converges() {
        let mut params = ParamSet::new();
        let x = params.push("x", Tensor::scalar(0.0));
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            &params,
        );
        let two = Tensor::scalar(2.0);
        for _ in 0..500 {
            let mut tape = Tape::new();
            let xv = tape.param(x, params.get(x));
            let c = tape.constant(two.clone());
            let d = tape.sub(xv, c).unwrap();
            let loss = tape.mul(d, d).unwrap();
            let grads = tape.backward(loss).unwrap();
            opt.step(&mut params, &grads).unwrap();
        }
        assert!((params.get(x).item() - 2.0).abs() < 1e-3);
    }

    #[test]
    fn mismatched_gradient_shape_is_rejected() {
        let mut params = ParamSet::new();
        let x = params.push("x", Tensor::zeros(2, 2));
        let mut opt = Adam::new(AdamConfig::default(), &params);
        let mut grads = Gradients::default();
        grads.insert(x, Tensor::zeros(1, 4));
        assert!(opt.step(&mut params, &grads).is_err());
    }
}
