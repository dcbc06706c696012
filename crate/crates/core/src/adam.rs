//! ADAM optimizer with bias-corrected moments.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{quantize_f32, Tensor};

/// Learning rate and first-moment decay follow the training setup; the
/// remaining constants are the standard ADAM defaults.
pub const DEFAULT_LEARNING_RATE: f64 = 0.0002;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: DEFAULT_LEARNING_RATE,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// First/second moment accumulators per parameter name plus the shared step
/// counter. One state instance is owned by exactly one training loop.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Advances the shared step counter. Call once per optimization step,
    /// before updating any parameter; bias correction uses the new count.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Applies the ADAM update to one named parameter using the current step
    /// count. The parameter is re-quantized to f32-representable values
    /// afterwards so checkpoints round-trip bit-exactly.
    pub fn update(&mut self, name: &str, tensor: &mut Tensor) -> Result<()> {
        let t = self.step as i32;
        let cfg = self.config;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let grad = tensor.grad().ok_or_else(|| Error::InvalidValue {
            context: "adam_step",
            detail: format!("parameter `{name}` has no gradient buffer"),
        })?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { param: name.to_string() });
        }
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; tensor.len()], vec![0.0; tensor.len()]));
        if m.len() != tensor.len() {
            return Err(Error::ShapeMismatch {
                context: "adam_step",
                expected: format!("{} elements for `{name}`", m.len()),
                got: format!("{} elements", tensor.len()),
            });
        }
        let grad = grad.to_vec();
        for (i, value) in tensor.data_mut().iter_mut().enumerate() {
            let g = grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *value -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        quantize_f32(tensor);
        Ok(())
    }

    /// One ADAM update over the given named parameters.
    pub fn step(&mut self, params: &mut [(String, &mut Tensor)]) -> Result<()> {
        self.begin_step();
        for (name, tensor) in params.iter_mut() {
            self.update(name, tensor)?;
        }
        Ok(())
    }

    /// Moment buffers in name order, for checkpointing.
    pub fn moment_entries(&self) -> impl Iterator<Item = (&String, &(Vec<f64>, Vec<f64>))> {
        self.moments.iter()
    }

    pub fn insert_moments(&mut self, name: String, m: Vec<f64>, v: Vec<f64>) {
        self.moments.insert(name, (m, v));
    }
}
