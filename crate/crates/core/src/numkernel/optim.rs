//! Plain SGD and bias-corrected Adam over flat parameter buffers.
//!
//! One `OptimizerState` owns the moment accumulators for one parameter set;
//! `step_mlp` and `step_dense` both advance the shared step counter exactly
//! once per call, so Adam's bias correction sees one logical update.

use super::mlp::{MlpGrads, MlpParams};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    /// Adam with the conditional-generation defaults: beta1 0.5, beta2 0.9.
    pub fn adam_gan() -> Self {
        OptimizerKind::Adam {
            beta1: 0.5,
            beta2: 0.9,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    /// `param_len` must equal the flat length of every parameter set this
    /// state will update.
    pub fn new(kind: OptimizerKind, lr: f64, param_len: usize) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam { .. } => (vec![0.0; param_len], vec![0.0; param_len]),
        };
        OptimizerState {
            kind,
            lr,
            step: 0,
            m,
            v,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    fn update_segment(
        &mut self,
        offset: usize,
        params: &mut [f64],
        grads: &[f64],
    ) -> std::result::Result<(), usize> {
        debug_assert_eq!(params.len(), grads.len());
        match self.kind {
            OptimizerKind::Sgd => {
                for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
                    if !g.is_finite() {
                        return Err(offset + i);
                    }
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                let c1 = 1.0 - beta1.powi(self.step as i32);
                let c2 = 1.0 - beta2.powi(self.step as i32);
                for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
                    if !g.is_finite() {
                        return Err(offset + i);
                    }
                    let m = &mut self.m[offset + i];
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    let v = &mut self.v[offset + i];
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= self.lr * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
        Ok(())
    }

    /// One update over a bare parameter buffer.
    pub fn step_dense(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "optimizer_step: {} parameters vs {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if matches!(self.kind, OptimizerKind::Adam { .. }) && self.m.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer_step: state sized for {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        self.update_segment(0, params, grads)
            .map_err(|i| Error::Numeric(format!("optimizer_step: non-finite gradient at parameter index {i}")))
    }

    /// One update over a full MLP parameter set.
    pub fn step_mlp(&mut self, params: &mut MlpParams, grads: &MlpGrads) -> Result<()> {
        if matches!(self.kind, OptimizerKind::Adam { .. }) && self.m.len() != params.flat_len() {
            return Err(Error::Shape(format!(
                "optimizer_step: state sized for {} parameters, network has {}",
                self.m.len(),
                params.flat_len()
            )));
        }
        self.step += 1;
        let mut offset = 0;
        for l in 0..params.num_layers() {
            let (wcols, wlen, blen) = {
                let layer = &params.layers()[l];
                let wlen = layer.weights.rows() * layer.weights.cols();
                (layer.weights.cols(), wlen, layer.bias.len())
            };
            let weights = params.layers_mut()[l].weights.data_mut();
            if let Err(i) = self.update_segment(offset, weights, grads.weights[l].data()) {
                let local = i - offset;
                return Err(Error::Numeric(format!(
                    "optimizer_step: non-finite gradient for layer {l} weights [{},{}]",
                    local / wcols,
                    local % wcols
                )));
            }
            offset += wlen;
            let bias = &mut params.layers_mut()[l].bias;
            if let Err(i) = self.update_segment(offset, bias, &grads.bias[l]) {
                return Err(Error::Numeric(format!(
                    "optimizer_step: non-finite gradient for layer {l} bias [{}]",
                    i - offset
                )));
            }
            offset += blen;
        }
        Ok(())
    }
}
