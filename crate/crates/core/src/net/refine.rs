//! Refinement stage: a skip-connected generator and a strided convolutional
//! discriminator.

use crate::activation::{activation_backward, activation_forward, Activation};
use crate::batchnorm::{BatchNorm, BatchNormCache};
use crate::conv::{conv2d_forward, ConvLayer};
use crate::error::{Error, Result};
use crate::net::{ParamEntry, ParamVisit};
use crate::tensor::Tensor;

const RELU: Activation = Activation::Relu;
const LEAKY: Activation = Activation::LeakyRelu { slope: 0.2 };
const SCALED_TANH: Activation = Activation::ScaledTanh;

/// Fully convolutional generator: `layers` 3×3 convolutions (default 10),
/// batch norm + ReLU after every layer except the last, which applies a
/// scaled tanh so outputs are valid [0,1] images. The output of layer i is
/// added to the input of layer L−i for i = 1..=skips.
#[derive(Clone, Debug)]
pub struct GeneratorNet {
    pub convs: Vec<ConvLayer>,
    pub bns: Vec<BatchNorm>,
    skips: Vec<(usize, usize)>,
    /// Skip count persisted alongside the weights; conv shapes alone cannot
    /// reconstruct the wiring when loading a checkpoint.
    skip_count: Tensor,
}

/// Forward activations for the backward pass. Layer numbering is 1-based to
/// match the skip wiring.
pub struct GeneratorCache {
    /// inputs[l-1]: input of layer l (after skip additions).
    pub inputs: Vec<Tensor>,
    /// bn_outs[l-1]: batch-norm output of layer l (pre-ReLU), l < L.
    pub bn_outs: Vec<Tensor>,
    bn_caches: Vec<BatchNormCache>,
    /// Pre-activation of the final layer.
    z_last: Tensor,
}

impl GeneratorNet {
    pub fn new(layers: usize, filters: usize, skips: usize) -> Self {
        assert!(layers >= 3, "generator needs at least 3 layers");
        assert!(
            skips * 2 + 1 < layers,
            "{skips} symmetric skips do not fit {layers} layers"
        );
        let mut convs = Vec::with_capacity(layers);
        convs.push(ConvLayer::new(3, filters, 3, 1));
        for _ in 1..layers - 1 {
            convs.push(ConvLayer::new(filters, filters, 3, 1));
        }
        convs.push(ConvLayer::new(filters, 3, 3, 1));
        let bns = (0..layers - 1).map(|_| BatchNorm::new(filters)).collect();
        let skip_count = Tensor::filled([1, 1, 1, 1], skips as f64);
        let skips = (1..=skips).map(|i| (i, layers - i)).collect();
        GeneratorNet {
            convs,
            bns,
            skips,
            skip_count,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.convs.len()
    }

    pub fn skip_pairs(&self) -> &[(usize, usize)] {
        &self.skips
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.channels() != 3 {
            return Err(Error::ShapeMismatch {
                context: "generator_forward",
                expected: "3 channels".into(),
                got: format!("{} channels", x.channels()),
            });
        }
        Ok(())
    }

    /// Training-mode forward (batch statistics; updates running stats).
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, GeneratorCache)> {
        self.check_input(x)?;
        let total = self.convs.len();
        let mut inputs = Vec::with_capacity(total);
        let mut bn_outs = Vec::with_capacity(total - 1);
        let mut bn_caches = Vec::with_capacity(total - 1);
        // h[l] = post-activation output of layer l (1-based); h[0] = x
        let mut h: Vec<Tensor> = Vec::with_capacity(total);
        h.push(x.clone());
        for l in 1..=total {
            let mut input = h[l - 1].clone();
            for &(src, dst) in &self.skips {
                if dst == l {
                    input = input.add(&h[src])?;
                }
            }
            let z = conv2d_forward(&input, &self.convs[l - 1])?;
            inputs.push(input);
            if l < total {
                let (bn_out, bn_cache) = self.bns[l - 1].forward_train(&z)?;
                h.push(activation_forward(&bn_out, RELU));
                bn_outs.push(bn_out);
                bn_caches.push(bn_cache);
            } else {
                let out = activation_forward(&z, SCALED_TANH);
                return Ok((
                    out,
                    GeneratorCache {
                        inputs,
                        bn_outs,
                        bn_caches,
                        z_last: z,
                    },
                ));
            }
        }
        unreachable!("loop returns on the final layer")
    }

    /// Inference-mode forward (running statistics, no state mutation).
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let total = self.convs.len();
        let mut h: Vec<Tensor> = Vec::with_capacity(total);
        h.push(x.clone());
        for l in 1..total {
            let mut input = h[l - 1].clone();
            for &(src, dst) in &self.skips {
                if dst == l {
                    input = input.add(&h[src])?;
                }
            }
            let z = conv2d_forward(&input, &self.convs[l - 1])?;
            h.push(activation_forward(&self.bns[l - 1].forward_eval(&z)?, RELU));
        }
        let mut input = h[total - 1].clone();
        for &(src, dst) in &self.skips {
            if dst == total {
                input = input.add(&h[src])?;
            }
        }
        let z = conv2d_forward(&input, &self.convs[total - 1])?;
        Ok(activation_forward(&z, SCALED_TANH))
    }

    /// Accumulates parameter gradients; returns the gradient w.r.t. the
    /// input image.
    pub fn backward(&mut self, cache: &GeneratorCache, grad_out: &Tensor) -> Result<Tensor> {
        let total = self.convs.len();
        let skips = self.skips.clone();
        // grad_h[l]: gradient w.r.t. the post-activation output of layer l
        // (index 0 = the network input).
        let mut grad_h: Vec<Option<Tensor>> = vec![None; total];

        let gz = activation_backward(&cache.z_last, SCALED_TANH, grad_out);
        let g_in = self.convs[total - 1].backward_accumulate(&cache.inputs[total - 1], &gz)?;
        distribute_input_grad(&mut grad_h, &skips, total, &g_in)?;

        for l in (1..total).rev() {
            let gh = grad_h[l].take().expect("gradient fully accumulated");
            let g_bn_out = activation_backward(&cache.bn_outs[l - 1], RELU, &gh);
            let gz = self.bns[l - 1].backward(&cache.bn_caches[l - 1], &g_bn_out)?;
            let g_in = self.convs[l - 1].backward_accumulate(&cache.inputs[l - 1], &gz)?;
            distribute_input_grad(&mut grad_h, &skips, l, &g_in)?;
        }
        Ok(grad_h[0].take().expect("input gradient"))
    }
}

/// The gradient of layer `layer`'s input flows to the previous layer's
/// output and, over any skip targeting this layer, to the skip source.
fn distribute_input_grad(
    grad_h: &mut [Option<Tensor>],
    skips: &[(usize, usize)],
    layer: usize,
    g_in: &Tensor,
) -> Result<()> {
    let add_to = |idx: usize, grad_h: &mut [Option<Tensor>]| -> Result<()> {
        grad_h[idx] = Some(match grad_h[idx].take() {
            Some(acc) => acc.add(g_in)?,
            None => g_in.clone(),
        });
        Ok(())
    };
    add_to(layer - 1, grad_h)?;
    for &(src, dst) in skips {
        if dst == layer {
            add_to(src, grad_h)?;
        }
    }
    Ok(())
}

impl ParamVisit for GeneratorNet {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamEntry<'_>)) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            conv.visit_params(&format!("{prefix}/conv{}", i + 1), f);
        }
        for (i, bn) in self.bns.iter_mut().enumerate() {
            bn.visit_params(&format!("{prefix}/bn{}", i + 1), f);
        }
        f(ParamEntry {
            name: format!("{prefix}/skip_count"),
            tensor: &mut self.skip_count,
            trainable: false,
        });
    }
}

/// Discriminator: four stride-2 3×3 convolutions (32, 64, 128, 256 filters)
/// with leaky ReLU (slope 0.2) and batch norm after layers 2–4, a global
/// average over the remaining spatial extent, and a 1×1 convolution with a
/// sigmoid producing one score per image in (0, 1).
#[derive(Clone, Debug)]
pub struct DiscriminatorNet {
    pub convs: Vec<ConvLayer>,
    pub bns: Vec<BatchNorm>,
    pub head: ConvLayer,
}

pub struct DiscriminatorCache {
    /// Input to each strided conv.
    inputs: Vec<Tensor>,
    /// Pre-activation of layer 1 (no batch norm there).
    z1: Tensor,
    /// Batch-norm outputs (pre-activation) of layers 2..=4.
    bn_outs: Vec<Tensor>,
    bn_caches: Vec<BatchNormCache>,
    pooled: Tensor,
    head_pre: Tensor,
    /// Spatial extent that was averaged over.
    pool_size: usize,
}

impl Default for DiscriminatorNet {
    fn default() -> Self {
        Self::new()
    }
}

impl DiscriminatorNet {
    pub fn new() -> Self {
        DiscriminatorNet {
            convs: vec![
                ConvLayer::new(3, 32, 3, 2),
                ConvLayer::new(32, 64, 3, 2),
                ConvLayer::new(64, 128, 3, 2),
                ConvLayer::new(128, 256, 3, 2),
            ],
            bns: vec![BatchNorm::new(64), BatchNorm::new(128), BatchNorm::new(256)],
            head: ConvLayer::new(256, 1, 1, 1),
        }
    }

    const DOWNSAMPLE: usize = 16;

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.channels() != 3 {
            return Err(Error::ShapeMismatch {
                context: "discriminator_forward",
                expected: "3 channels".into(),
                got: format!("{} channels", x.channels()),
            });
        }
        let (h, w) = (x.height(), x.width());
        if h % Self::DOWNSAMPLE != 0 || w % Self::DOWNSAMPLE != 0 || h == 0 || w == 0 {
            return Err(Error::SpatialNotDivisible {
                height: h,
                width: w,
                required: Self::DOWNSAMPLE,
            });
        }
        Ok(())
    }

    /// Image batch -> one score per image, strictly inside (0, 1).
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, DiscriminatorCache)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(4);
        let mut bn_outs = Vec::with_capacity(3);
        let mut bn_caches = Vec::with_capacity(3);
        let mut h = x.clone();
        let mut z1 = None;
        for (i, conv) in self.convs.iter().enumerate() {
            inputs.push(h.clone());
            let z = conv2d_forward(&h, conv)?;
            if i == 0 {
                h = activation_forward(&z, LEAKY);
                z1 = Some(z);
            } else {
                let (bn_out, bn_cache) = self.bns[i - 1].forward_train(&z)?;
                h = activation_forward(&bn_out, LEAKY);
                bn_outs.push(bn_out);
                bn_caches.push(bn_cache);
            }
        }
        let pooled = global_average(&h);
        let head_pre = conv2d_forward(&pooled, &self.head)?;
        let scores = activation_forward(&head_pre, Activation::Sigmoid);
        Ok((
            scores,
            DiscriminatorCache {
                inputs,
                z1: z1.expect("first layer ran"),
                bn_outs,
                bn_caches,
                pool_size: h.plane_len(),
                pooled,
                head_pre,
            },
        ))
    }

    /// Accumulates parameter gradients; returns the gradient w.r.t. the
    /// input image.
    pub fn backward(&mut self, cache: &DiscriminatorCache, grad_scores: &Tensor) -> Result<Tensor> {
        let gz = activation_backward(&cache.head_pre, Activation::Sigmoid, grad_scores);
        let g_pooled = self.head.backward_accumulate(&cache.pooled, &gz)?;
        // undo the global average: every pixel shares the mean's gradient
        let [n, c, _, _] = cache.bn_outs[2].shape();
        let (ph, pw) = (cache.bn_outs[2].height(), cache.bn_outs[2].width());
        let scale = 1.0 / cache.pool_size as f64;
        let mut g = Tensor::zeros([n, c, ph, pw]);
        for ni in 0..n {
            for ci in 0..c {
                let gv = g_pooled.at(ni, ci, 0, 0) * scale;
                g.plane_mut(ni, ci).fill(gv);
            }
        }
        for i in (0..self.convs.len()).rev() {
            let gz = if i == 0 {
                activation_backward(&cache.z1, LEAKY, &g)
            } else {
                let g_bn_out = activation_backward(&cache.bn_outs[i - 1], LEAKY, &g);
                self.bns[i - 1].backward(&cache.bn_caches[i - 1], &g_bn_out)?
            };
            g = self.convs[i].backward_accumulate(&cache.inputs[i], &gz)?;
        }
        Ok(g)
    }
}

/// Mean over the spatial extent of every channel: (N,C,H,W) -> (N,C,1,1).
fn global_average(x: &Tensor) -> Tensor {
    let [n, c, _, _] = x.shape();
    let mut out = Tensor::zeros([n, c, 1, 1]);
    let scale = 1.0 / x.plane_len() as f64;
    for ni in 0..n {
        for ci in 0..c {
            let s: f64 = x.plane(ni, ci).iter().sum();
            out.set(ni, ci, 0, 0, s * scale);
        }
    }
    out
}

impl ParamVisit for DiscriminatorNet {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamEntry<'_>)) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            conv.visit_params(&format!("{prefix}/conv{}", i + 1), f);
        }
        for (i, bn) in self.bns.iter_mut().enumerate() {
            // batch norm sits after layers 2..=4
            bn.visit_params(&format!("{prefix}/bn{}", i + 2), f);
        }
        self.head.visit_params(&format!("{prefix}/head"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::GradCheck;
    use crate::loss::mse_loss;
    use crate::net::{init_rng, init_weights, pack_grads, pack_values, unpack_values, zero_grads};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, shape: [usize; 4]) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.iter().product::<usize>())
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn generator_output_is_a_valid_image() {
        let mut g = GeneratorNet::new(10, 32, 4);
        init_weights(&mut g, &mut init_rng(1));
        let x = random_image(2, [2, 3, 16, 16]);
        let (y, _) = g.forward_train(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.min_value() >= 0.0 && y.max_value() <= 1.0);
    }

    #[test]
    fn generator_skip_pairs_are_symmetric() {
        let g = GeneratorNet::new(10, 32, 4);
        assert_eq!(g.skip_pairs(), &[(1, 9), (2, 8), (3, 7), (4, 6)]);
    }

    /// Structural check of the skip wiring: with every conv weight zero,
    /// forcing layer 1's output nonzero (via its batch-norm shift) still
    /// changes layer 9's input, because the only live path is the skip.
    #[test]
    fn skip_connections_carry_signal_across_zeroed_layers() {
        let mut g = GeneratorNet::new(10, 8, 4);
        g.bns[0].beta.data_mut().fill(1.0); // h1 = relu(0 + 1) = 1
        let x = random_image(3, [2, 3, 8, 8]);
        let (_, cache_with) = g.forward_train(&x).unwrap();

        let mut g0 = GeneratorNet::new(10, 8, 4); // h1 == 0
        let (_, cache_without) = g0.forward_train(&x).unwrap();

        let layer9_in_with = &cache_with.inputs[8];
        let layer9_in_without = &cache_without.inputs[8];
        assert!(
            layer9_in_with.max_abs_diff(layer9_in_without).unwrap() > 0.0,
            "zeroing layer 1's output must change layer 9's input via the skip"
        );
    }

    #[test]
    fn generator_gradients_match_finite_differences() {
        let mut g = GeneratorNet::new(5, 4, 1);
        init_weights(&mut g, &mut init_rng(4));
        let x = random_image(5, [2, 3, 6, 6]);
        let target = random_image(6, [2, 3, 6, 6]);

        zero_grads(&mut g);
        let (y, cache) = g.forward_train(&x).unwrap();
        let (_, grad_y) = mse_loss(&y, &target).unwrap();
        g.backward(&cache, &grad_y).unwrap();
        let analytic = pack_grads(&mut g);
        let point = pack_values(&mut g);

        let base = g.clone();
        let mut f = |values: &[f64]| {
            let mut m = base.clone();
            unpack_values(&mut m, values);
            let (y, _) = m.forward_train(&x).unwrap();
            mse_loss(&y, &target).unwrap().0
        };
        let step = (point.len() / 80).max(1);
        let indices: Vec<usize> = (0..point.len()).step_by(step).collect();
        // h = 1e-5: larger steps stride across ReLU kinks in deep composites
        let check = GradCheck { step: 1e-5, denom_floor: 1e-8 };
        let err = check.max_rel_err_at(&mut f, &point, &analytic, &indices);
        assert!(err < 1e-3, "generator gradcheck failed: {err}");
    }

    #[test]
    fn generator_eval_mode_is_deterministic_and_stateless() {
        let mut g = GeneratorNet::new(6, 8, 2);
        init_weights(&mut g, &mut init_rng(7));
        let x = random_image(8, [1, 3, 8, 8]);
        let a = g.forward_eval(&x).unwrap();
        let b = g.forward_eval(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn discriminator_emits_one_score_per_image() {
        let mut d = DiscriminatorNet::new();
        init_weights(&mut d, &mut init_rng(9));
        let x = random_image(10, [8, 3, 16, 16]);
        let (scores, _) = d.forward_train(&x).unwrap();
        assert_eq!(scores.shape(), [8, 1, 1, 1]);
        assert!(scores.min_value() > 0.0 && scores.max_value() < 1.0);
    }

    #[test]
    fn discriminator_rejects_indivisible_sizes() {
        let mut d = DiscriminatorNet::new();
        init_weights(&mut d, &mut init_rng(11));
        let x = random_image(12, [1, 3, 20, 16]);
        match d.forward_train(&x) {
            Err(Error::SpatialNotDivisible { required, .. }) => assert_eq!(required, 16),
            Err(other) => panic!("expected SpatialNotDivisible, got {other:?}"),
            Ok(_) => panic!("expected SpatialNotDivisible, got Ok"),
        }
    }

    #[test]
    fn discriminator_gradients_match_finite_differences() {
        let mut d = DiscriminatorNet::new();
        init_weights(&mut d, &mut init_rng(13));
        // batch of 2: the deepest batch norm sees a 1x1 spatial extent and
        // needs at least two values per channel in train mode
        let x = random_image(14, [2, 3, 16, 16]);

        // scalar loss: sum of scores
        zero_grads(&mut d);
        let (scores, cache) = d.forward_train(&x).unwrap();
        let ones = Tensor::filled(scores.shape(), 1.0);
        d.backward(&cache, &ones).unwrap();
        let analytic = pack_grads(&mut d);
        let point = pack_values(&mut d);

        let base = d.clone();
        let mut f = |values: &[f64]| {
            let mut m = base.clone();
            unpack_values(&mut m, values);
            let (s, _) = m.forward_train(&x).unwrap();
            s.sum()
        };
        let step = (point.len() / 60).max(1);
        let indices: Vec<usize> = (0..point.len()).step_by(step).collect();
        let check = GradCheck { step: 1e-5, denom_floor: 1e-8 };
        let err = check.max_rel_err_at(&mut f, &point, &analytic, &indices);
        assert!(err < 1e-3, "discriminator gradcheck failed: {err}");
    }
}
