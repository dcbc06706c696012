//! The five network architectures, weight initialization, and checkpoint
//! serialization.

pub mod checkpoint;
pub mod refine;
pub mod removal;
pub mod transmission;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use refine::{DiscriminatorNet, GeneratorNet};
pub use removal::HazeRemovalNet;
pub use transmission::{CoarseNet, FineNet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::batchnorm::BatchNorm;
use crate::conv::ConvLayer;
use crate::tensor::{quantize_f32, Tensor};

/// One named persistent tensor of a network. Non-trainable entries
/// (batch-norm running statistics) are checkpointed but never optimized.
pub struct ParamEntry<'a> {
    pub name: String,
    pub tensor: &'a mut Tensor,
    pub trainable: bool,
}

/// Visits every persistent tensor in a fixed, deterministic order.
pub trait ParamVisit {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamEntry<'_>));
}

impl ParamVisit for ConvLayer {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamEntry<'_>)) {
        f(ParamEntry {
            name: format!("{prefix}/weight"),
            tensor: &mut self.kernel,
            trainable: true,
        });
        f(ParamEntry {
            name: format!("{prefix}/bias"),
            tensor: &mut self.bias,
            trainable: true,
        });
    }
}

impl ParamVisit for BatchNorm {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamEntry<'_>)) {
        f(ParamEntry {
            name: format!("{prefix}/gamma"),
            tensor: &mut self.gamma,
            trainable: true,
        });
        f(ParamEntry {
            name: format!("{prefix}/beta"),
            tensor: &mut self.beta,
            trainable: true,
        });
        f(ParamEntry {
            name: format!("{prefix}/running_mean"),
            tensor: &mut self.running_mean,
            trainable: false,
        });
        f(ParamEntry {
            name: format!("{prefix}/running_var"),
            tensor: &mut self.running_var,
            trainable: false,
        });
    }
}

pub fn zero_grads(net: &mut (impl ParamVisit + ?Sized)) {
    net.visit_params("", &mut |e| {
        if e.trainable {
            e.tensor.ensure_grad();
            e.tensor.zero_grad();
        }
    });
}

pub fn param_names(net: &mut (impl ParamVisit + ?Sized), prefix: &str) -> Vec<String> {
    let mut names = Vec::new();
    net.visit_params(prefix, &mut |e| names.push(e.name));
    names
}

/// Flattens all trainable parameter values in visitation order.
pub fn pack_values(net: &mut (impl ParamVisit + ?Sized)) -> Vec<f64> {
    let mut out = Vec::new();
    net.visit_params("", &mut |e| {
        if e.trainable {
            out.extend_from_slice(e.tensor.data());
        }
    });
    out
}

/// Flattens all trainable parameter gradients in visitation order.
pub fn pack_grads(net: &mut (impl ParamVisit + ?Sized)) -> Vec<f64> {
    let mut out = Vec::new();
    net.visit_params("", &mut |e| {
        if e.trainable {
            match e.tensor.grad() {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(std::iter::repeat_n(0.0, e.tensor.len())),
            }
        }
    });
    out
}

/// Writes a flat value vector back into the trainable parameters.
pub fn unpack_values(net: &mut (impl ParamVisit + ?Sized), values: &[f64]) {
    let mut offset = 0;
    net.visit_params("", &mut |e| {
        if e.trainable {
            let n = e.tensor.len();
            e.tensor.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
    });
    assert_eq!(offset, values.len(), "value vector length mismatch");
}

/// Initializes a network in place: convolution kernels draw from a zero-mean
/// normal with std sqrt(2 / fan_in), biases and batch-norm shifts are zero,
/// batch-norm scales are one. Values are f32-quantized so checkpoints
/// round-trip exactly.
pub fn init_weights(net: &mut (impl ParamVisit + ?Sized), rng: &mut ChaCha8Rng) {
    net.visit_params("", &mut |e| {
        let role = e.name.rsplit('/').next().unwrap_or("");
        match role {
            "weight" => {
                let [_, in_c, kh, kw] = e.tensor.shape();
                let fan_in = (in_c * kh * kw) as f64;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                for v in e.tensor.data_mut() {
                    *v = normal.sample(rng);
                }
                quantize_f32(e.tensor);
            }
            "bias" | "beta" | "running_mean" => {
                e.tensor.data_mut().fill(0.0);
            }
            "gamma" | "running_var" => {
                e.tensor.data_mut().fill(1.0);
            }
            // architecture descriptors, not parameters
            "skip_count" => {}
            other => panic!("unknown parameter role `{other}` in `{}`", e.name),
        }
        e.tensor.ensure_grad();
        e.tensor.zero_grad();
    });
}

/// Fresh ChaCha stream for weight initialization.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
