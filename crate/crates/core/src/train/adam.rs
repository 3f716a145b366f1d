//! Adam with bias correction and coupled (gradient-added) weight decay.

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tensor};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Per-parameter moment estimates plus the shared step counter.
pub struct OptimizerState {
    step: usize,
    moments: Vec<Moments>,
}

impl OptimizerState {
    pub fn new() -> Self {
        OptimizerState {
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One update over all parameters. `bound` are the tape leaves matching
    /// `params` in order; gradients are read through them.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        bound: &[Tensor],
        grads: &Gradients,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if params.len() != bound.len() {
            return Err(Error::dim(
                "adam_step",
                format!("{} parameters vs {} bound leaves", params.len(), bound.len()),
            ));
        }
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| Moments {
                    m: vec![0.0; p.len()],
                    v: vec![0.0; p.len()],
                })
                .collect();
        }
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);

        for ((param, leaf), moments) in params.iter_mut().zip(bound).zip(&mut self.moments) {
            if param.shape() != leaf.shape() {
                return Err(Error::dim(
                    "adam_step",
                    format!(
                        "parameter {}x{} vs leaf {}x{}",
                        param.rows(),
                        param.cols(),
                        leaf.rows(),
                        leaf.cols()
                    ),
                ));
            }
            let grad = grads
                .get(leaf)
                .ok_or_else(|| Error::Config("bound leaf missing from gradient map".into()))?;
            let mut next = param.values().to_vec();
            for i in 0..next.len() {
                let g = grad.values()[i] + weight_decay * next[i];
                moments.m[i] = BETA1 * moments.m[i] + (1.0 - BETA1) * g;
                moments.v[i] = BETA2 * moments.v[i] + (1.0 - BETA2) * g * g;
                let m_hat = moments.m[i] / bc1;
                let v_hat = moments.v[i] / bc2;
                next[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
            }
            **param = Tensor::from_vec(param.rows(), param.cols(), next);
        }
        Ok(())
    }
}

impl Default for OptimizerState {
    fn default() -> Self {
        Self::new()
    }
}
