//! Coarse- and fine-scale transmission prediction networks.
//!
//! The coarse net predicts a holistic transmission map from the hazy image;
//! the fine net refines its textures, seeing the coarse output concatenated
//! onto its own first-layer features. Both are fully convolutional with no
//! pooling or up-sampling, and end in a sigmoid so transmissions stay in
//! (0, 1). Gradients flow from the fine net back into the coarse net.

use crate::activation::{activation_backward, activation_forward, Activation};
use crate::conv::{conv2d_forward, ConvLayer};
use crate::error::{Error, Result};
use crate::net::{ParamEntry, ParamVisit};
use crate::tensor::{concat_channels, split_channels, Tensor};

const RELU: Activation = Activation::Relu;
const SIGMOID: Activation = Activation::Sigmoid;

/// Four layers: 16 filters 11×11, 16 at 9×9, 16 at 7×7, 1 at 5×5.
#[derive(Clone, Debug)]
pub struct CoarseNet {
    pub layers: Vec<ConvLayer>,
}

pub struct CoarseCache {
    inputs: Vec<Tensor>,
    pres: Vec<Tensor>,
}

impl Default for CoarseNet {
    fn default() -> Self {
        Self::new()
    }
}

impl CoarseNet {
    pub fn new() -> Self {
        CoarseNet {
            layers: vec![
                ConvLayer::new(3, 16, 11, 1),
                ConvLayer::new(16, 16, 9, 1),
                ConvLayer::new(16, 16, 7, 1),
                ConvLayer::new(16, 1, 5, 1),
            ],
        }
    }

    /// Hazy image (N,3,H,W) -> coarse transmission (N,1,H,W) in (0,1).
    pub fn forward(&self, hazy: &Tensor) -> Result<(Tensor, CoarseCache)> {
        let mut inputs = Vec::with_capacity(4);
        let mut pres = Vec::with_capacity(4);
        let mut x = hazy.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            inputs.push(x.clone());
            let z = conv2d_forward(&x, layer)?;
            x = if i + 1 < self.layers.len() {
                activation_forward(&z, RELU)
            } else {
                activation_forward(&z, SIGMOID)
            };
            pres.push(z);
        }
        Ok((x, CoarseCache { inputs, pres }))
    }

    /// Accumulates parameter gradients; returns the gradient w.r.t. the
    /// hazy input.
    pub fn backward(&mut self, cache: &CoarseCache, grad_out: &Tensor) -> Result<Tensor> {
        let last = self.layers.len() - 1;
        let mut g = activation_backward(&cache.pres[last], SIGMOID, grad_out);
        for i in (0..self.layers.len()).rev() {
            if i != last {
                g = activation_backward(&cache.pres[i], RELU, &g);
            }
            g = self.layers[i].backward_accumulate(&cache.inputs[i], &g)?;
        }
        Ok(g)
    }
}

impl ParamVisit for CoarseNet {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamEntry<'_>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_params(&format!("{prefix}/conv{}", i + 1), f);
        }
    }
}

/// Four layers: 16 filters 7×7, then — after the coarse map joins the first
/// layer's 16 features — 16 at 5×5, 16 at 3×3, 1 at 1×1.
#[derive(Clone, Debug)]
pub struct FineNet {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub conv3: ConvLayer,
    pub conv4: ConvLayer,
}

pub struct FineCache {
    hazy: Tensor,
    z1: Tensor,
    concat: Tensor,
    z2: Tensor,
    a2: Tensor,
    z3: Tensor,
    a3: Tensor,
    z4: Tensor,
}

impl Default for FineNet {
    fn default() -> Self {
        Self::new()
    }
}

impl FineNet {
    pub fn new() -> Self {
        FineNet {
            conv1: ConvLayer::new(3, 16, 7, 1),
            conv2: ConvLayer::new(16 + 1, 16, 5, 1),
            conv3: ConvLayer::new(16, 16, 3, 1),
            conv4: ConvLayer::new(16, 1, 1, 1),
        }
    }

    /// Hazy image plus the coarse transmission -> fine transmission in (0,1).
    pub fn forward(&self, hazy: &Tensor, coarse_t: &Tensor) -> Result<(Tensor, FineCache)> {
        if coarse_t.channels() != 1 {
            return Err(Error::ShapeMismatch {
                context: "fine_forward",
                expected: "1-channel coarse transmission".into(),
                got: format!("{} channels", coarse_t.channels()),
            });
        }
        let z1 = conv2d_forward(hazy, &self.conv1)?;
        let a1 = activation_forward(&z1, RELU);
        let concat = concat_channels(&a1, coarse_t)?;
        let z2 = conv2d_forward(&concat, &self.conv2)?;
        let a2 = activation_forward(&z2, RELU);
        let z3 = conv2d_forward(&a2, &self.conv3)?;
        let a3 = activation_forward(&z3, RELU);
        let z4 = conv2d_forward(&a3, &self.conv4)?;
        let out = activation_forward(&z4, SIGMOID);
        Ok((
            out,
            FineCache {
                hazy: hazy.clone(),
                z1,
                concat,
                z2,
                a2,
                z3,
                a3,
                z4,
            },
        ))
    }

    /// Returns gradients w.r.t. the hazy input and the coarse transmission;
    /// the latter carries the fine net's contribution back into the coarse
    /// net for joint training.
    pub fn backward(&mut self, cache: &FineCache, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
        let g4 = activation_backward(&cache.z4, SIGMOID, grad_out);
        let ga3 = self.conv4.backward_accumulate(&cache.a3, &g4)?;
        let g3 = activation_backward(&cache.z3, RELU, &ga3);
        let ga2 = self.conv3.backward_accumulate(&cache.a2, &g3)?;
        let g2 = activation_backward(&cache.z2, RELU, &ga2);
        let gcat = self.conv2.backward_accumulate(&cache.concat, &g2)?;
        let (ga1, gcoarse) = split_channels(&gcat, 16)?;
        let g1 = activation_backward(&cache.z1, RELU, &ga1);
        let ghazy = self.conv1.backward_accumulate(&cache.hazy, &g1)?;
        Ok((ghazy, gcoarse))
    }
}

impl ParamVisit for FineNet {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamEntry<'_>)) {
        self.conv1.visit_params(&format!("{prefix}/conv1"), f);
        self.conv2.visit_params(&format!("{prefix}/conv2"), f);
        self.conv3.visit_params(&format!("{prefix}/conv3"), f);
        self.conv4.visit_params(&format!("{prefix}/conv4"), f);
    }
}
