//! Residual haze-removal network.
//!
//! Input is the hazy image with the predicted fine transmission appended as
//! a fourth feature map (or the bare image in the ablation). Blocks of 3×3
//! convolutions stack their input back onto their output (channel
//! concatenation), the final layer emits a 3-channel residual, and the
//! dehazed image is residual + hazy. No batch normalization anywhere, so no
//! image detail is discarded.

use crate::activation::{activation_backward, activation_forward, Activation};
use crate::conv::{conv2d_forward, ConvLayer};
use crate::error::{Error, Result};
use crate::net::{ParamEntry, ParamVisit};
use crate::tensor::{concat_channels, split_channels, Tensor};

const RELU: Activation = Activation::Relu;

#[derive(Clone, Debug)]
pub struct HazeRemovalNet {
    pub blocks: Vec<Vec<ConvLayer>>,
    pub output: ConvLayer,
    input_channels: usize,
    filters: usize,
}

pub struct RemovalCache {
    /// Per block: input to each conv layer and its pre-activation.
    layer_inputs: Vec<Vec<Tensor>>,
    pres: Vec<Vec<Tensor>>,
    /// The stacked tensor feeding the output convolution.
    stack_out: Tensor,
}

impl HazeRemovalNet {
    /// `input_channels` is 4 (image + transmission) or 3 for the ablation.
    pub fn new(
        input_channels: usize,
        blocks: usize,
        layers_per_block: usize,
        filters: usize,
    ) -> Self {
        let mut block_list = Vec::with_capacity(blocks);
        let mut c_in = input_channels;
        for _ in 0..blocks {
            let mut layers = Vec::with_capacity(layers_per_block);
            let mut c = c_in;
            for _ in 0..layers_per_block {
                layers.push(ConvLayer::new(c, filters, 3, 1));
                c = filters;
            }
            block_list.push(layers);
            // dense stacking: block output carries its input along
            c_in = filters + c_in;
        }
        HazeRemovalNet {
            blocks: block_list,
            output: ConvLayer::new(c_in, 3, 3, 1),
            input_channels,
            filters,
        }
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    /// Hazy image (+ optional fine transmission) -> (residual, dehazed).
    /// The dehazed output is residual + hazy, unclamped; inference clamps
    /// to [0, 1] outside the loss path.
    pub fn forward(
        &self,
        hazy: &Tensor,
        fine_t: Option<&Tensor>,
    ) -> Result<(Tensor, Tensor, RemovalCache)> {
        let net_input = match fine_t {
            Some(t) => concat_channels(hazy, t)?,
            None => hazy.clone(),
        };
        if net_input.channels() != self.input_channels {
            return Err(Error::ShapeMismatch {
                context: "haze_removal_forward",
                expected: format!("{} input channels", self.input_channels),
                got: format!("{} channels", net_input.channels()),
            });
        }
        let mut layer_inputs = Vec::with_capacity(self.blocks.len());
        let mut pres = Vec::with_capacity(self.blocks.len());
        let mut x = net_input;
        for block in &self.blocks {
            let mut ins = Vec::with_capacity(block.len());
            let mut zs = Vec::with_capacity(block.len());
            let mut h = x.clone();
            for layer in block {
                ins.push(h.clone());
                let z = conv2d_forward(&h, layer)?;
                h = activation_forward(&z, RELU);
                zs.push(z);
            }
            layer_inputs.push(ins);
            pres.push(zs);
            x = concat_channels(&h, &x)?;
        }
        let residual = conv2d_forward(&x, &self.output)?;
        let dehazed = residual.add(hazy)?;
        Ok((
            residual,
            dehazed,
            RemovalCache {
                layer_inputs,
                pres,
                stack_out: x,
            },
        ))
    }

    /// Accumulates parameter gradients; returns the gradient w.r.t. the
    /// network input (image channels first, then the transmission channel
    /// when present).
    pub fn backward(&mut self, cache: &RemovalCache, grad_residual: &Tensor) -> Result<Tensor> {
        let mut g = self
            .output
            .backward_accumulate(&cache.stack_out, grad_residual)?;
        for (block_idx, block) in self.blocks.iter_mut().enumerate().rev() {
            let (mut gh, g_direct) = split_channels(&g, self.filters)?;
            for (layer_idx, layer) in block.iter_mut().enumerate().rev() {
                let gz = activation_backward(&cache.pres[block_idx][layer_idx], RELU, &gh);
                gh = layer.backward_accumulate(&cache.layer_inputs[block_idx][layer_idx], &gz)?;
            }
            g = gh.add(&g_direct)?;
        }
        Ok(g)
    }
}

impl ParamVisit for HazeRemovalNet {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamEntry<'_>)) {
        for (b, block) in self.blocks.iter_mut().enumerate() {
            for (l, layer) in block.iter_mut().enumerate() {
                layer.visit_params(&format!("{prefix}/block{}/conv{}", b + 1, l + 1), f);
            }
        }
        self.output.visit_params(&format!("{prefix}/output"), f);
    }
}
