use crate::encoder::Tensors;
use crate::error::{Error, Result};

use super::config::OptimizerKind;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Optimizer state over a fixed list of parameter slices.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam {
        step: u64,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam {
                step: 0,
                m: Vec::new(),
                v: Vec::new(),
            },
        }
    }

    /// In-place update `params[k] -= lr · direction(grads[k])`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len())
        {
            return Err(Error::ShapeMismatch(
                "parameter and gradient shapes differ".into(),
            ));
        }
        match self {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (x, d) in p.iter_mut().zip(g.iter()) {
                        *x -= lr * d;
                    }
                }
            }
            Optimizer::Adam { step, m, v } => {
                if m.is_empty() {
                    *m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                    *v = m.clone();
                } else if m.len() != grads.len()
                    || m.iter().zip(grads).any(|(a, g)| a.len() != g.len())
                {
                    return Err(Error::ShapeMismatch(
                        "optimizer state does not match parameters".into(),
                    ));
                }
                *step += 1;
                let t = *step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    for (i, (x, &d)) in p.iter_mut().zip(g.iter()).enumerate() {
                        let mk = &mut m[k][i];
                        let vk = &mut v[k][i];
                        *mk = ADAM_BETA1 * *mk + (1.0 - ADAM_BETA1) * d;
                        *vk = ADAM_BETA2 * *vk + (1.0 - ADAM_BETA2) * d * d;
                        let m_hat = *mk / c1;
                        let v_hat = *vk / c2;
                        *x -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn step_tensors(&mut self, params: &mut Tensors, grads: &Tensors, lr: f64) -> Result<()> {
        let mut p = params.slices_mut();
        self.step(&mut p, &grads.slices(), lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut x = vec![1.5, -2.0];
        let g = vec![0.0, 0.0];
        Optimizer::new(OptimizerKind::Sgd)
            .step(&mut [&mut x], &[&g], 0.1)
            .unwrap();
        assert_eq!(x, vec![1.5, -2.0]);
        let mut adam = Optimizer::new(OptimizerKind::Adam);
        for _ in 0..5 {
            adam.step(&mut [&mut x], &[&g], 0.1).unwrap();
        }
        assert!((x[0] - 1.5).abs() < 1e-12 && (x[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn sgd_one_step() {
        let mut x = vec![1.0];
        Optimizer::new(OptimizerKind::Sgd)
            .step(&mut [&mut x], &[&[2.0]], 0.1)
            .unwrap();
        assert!((x[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step() {
        let mut x = vec![0.0];
        Optimizer::new(OptimizerKind::Adam)
            .step(&mut [&mut x], &[&[1.0]], 0.001)
            .unwrap();
        // m̂ = 1, v̂ = 1, so the step is lr / (1 + ε)
        assert!((x[0] + 0.001 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut x = vec![0.0, 1.0];
        assert!(matches!(
            Optimizer::new(OptimizerKind::Sgd).step(&mut [&mut x], &[&[1.0]], 0.1),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
