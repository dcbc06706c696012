//! 2-D convolution (cross-correlation, no kernel flip) with explicit backward.
//!
//! The inner loop is im2col + a single f64 GEMM per batch element. Batch
//! elements run in parallel: each writes its own output slice, and kernel
//! gradients are reduced over batch elements in fixed batch order, so
//! repeated runs on identical inputs are bit-identical.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A convolution layer: kernel (out_c, in_c, k, k), per-channel bias,
/// zero padding of `padding` pixels per side.
///
/// Kernels are square with odd size and padding = (k-1)/2, so stride-1
/// convolutions preserve the spatial size.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayer {
    /// Zero-initialized layer. `k` must be odd; only strides 1 and 2 are
    /// supported.
    pub fn new(in_channels: usize, out_channels: usize, k: usize, stride: usize) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd, got {k}");
        assert!(stride == 1 || stride == 2, "only strides 1 and 2 are supported");
        let mut kernel = Tensor::zeros([out_channels, in_channels, k, k]);
        kernel.ensure_grad();
        let mut bias = Tensor::zeros([1, out_channels, 1, 1]);
        bias.ensure_grad();
        ConvLayer {
            kernel,
            bias,
            stride,
            padding: (k - 1) / 2,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape()[2]
    }

    /// Output spatial size for an input of `h` x `w`.
    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel_size();
        (
            (h + 2 * self.padding - k) / self.stride + 1,
            (w + 2 * self.padding - k) / self.stride + 1,
        )
    }

    /// Backward pass that accumulates kernel/bias gradients into this layer
    /// and returns the gradient with respect to the input.
    pub fn backward_accumulate(&mut self, input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let grads = conv2d_backward(input, self, grad_out)?;
        self.kernel.accumulate_grad(&grads.kernel)?;
        self.bias.accumulate_grad(&grads.bias)?;
        Ok(grads.input)
    }
}

/// Gradients of the convolution forward map.
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

fn check_input(input: &Tensor, layer: &ConvLayer, context: &'static str) -> Result<()> {
    if input.channels() != layer.in_channels() {
        return Err(Error::ShapeMismatch {
            context,
            expected: format!("{} input channels", layer.in_channels()),
            got: format!("{} channels", input.channels()),
        });
    }
    Ok(())
}

/// Fills `cols` (rows = in_c*k*k, cols = oh*ow) with the unrolled receptive
/// fields of one batch element. Out-of-bounds taps are zero.
fn im2col(
    input: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    cols: &mut [f64],
) {
    let plane = h * w;
    let out_plane = oh * ow;
    for ic in 0..in_c {
        let src = &input[ic * plane..(ic + 1) * plane];
        for kh in 0..k {
            for kw in 0..k {
                let row = (ic * k + kh) * k + kw;
                let dst = &mut cols[row * out_plane..(row + 1) * out_plane];
                let dy = kh as isize - pad as isize;
                let dx = kw as isize - pad as isize;
                if stride == 1 {
                    dst.fill(0.0);
                    // valid output range so that (y+dy, x+dx) stays in bounds
                    let y0 = (-dy).max(0) as usize;
                    let y1 = ((h as isize - dy).min(oh as isize)).max(0) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = ((w as isize - dx).min(ow as isize)).max(0) as usize;
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        let ix0 = (x0 as isize + dx) as usize;
                        let ix1 = (x1 as isize + dx) as usize;
                        dst[y * ow + x0..y * ow + x1].copy_from_slice(&src[iy * w + ix0..iy * w + ix1]);
                    }
                } else {
                    for y in 0..oh {
                        let iy = (y * stride) as isize + dy;
                        for x in 0..ow {
                            let ix = (x * stride) as isize + dx;
                            dst[y * ow + x] = if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize
                            {
                                src[iy as usize * w + ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add of unrolled gradients back onto the input plane; the adjoint
/// of [`im2col`].
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    grad_input: &mut [f64],
) {
    let plane = h * w;
    let out_plane = oh * ow;
    for ic in 0..in_c {
        let dst = &mut grad_input[ic * plane..(ic + 1) * plane];
        for kh in 0..k {
            for kw in 0..k {
                let row = (ic * k + kh) * k + kw;
                let src = &cols[row * out_plane..(row + 1) * out_plane];
                let dy = kh as isize - pad as isize;
                let dx = kw as isize - pad as isize;
                for y in 0..oh {
                    let iy = (y * stride) as isize + dy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for x in 0..ow {
                        let ix = (x * stride) as isize + dx;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dst[iy as usize * w + ix as usize] += src[y * ow + x];
                    }
                }
            }
        }
    }
}

/// Cross-correlates the zero-padded input with the layer kernel and adds the
/// per-channel bias. Output shape is (N, out_c, oh, ow).
pub fn conv2d_forward(input: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    check_input(input, layer, "conv2d_forward")?;
    let [n, in_c, h, w] = input.shape();
    let (out_c, k) = (layer.out_channels(), layer.kernel_size());
    let (oh, ow) = layer.out_size(h, w);
    let out_plane = oh * ow;
    let krows = in_c * k * k;

    let mut out = Tensor::zeros([n, out_c, oh, ow]);
    let batch_stride = out_c * out_plane;
    out.data_mut()
        .par_chunks_mut(batch_stride)
        .enumerate()
        .for_each(|(ni, ob)| {
            let mut cols = vec![0.0; krows * out_plane];
            im2col(
                input.batch_slice(ni),
                in_c,
                h,
                w,
                k,
                layer.padding,
                layer.stride,
                oh,
                ow,
                &mut cols,
            );
            for oc in 0..out_c {
                ob[oc * out_plane..(oc + 1) * out_plane].fill(layer.bias.data()[oc]);
            }
            // out += kernel (out_c x krows) @ cols (krows x out_plane)
            unsafe {
                matrixmultiply::dgemm(
                    out_c,
                    krows,
                    out_plane,
                    1.0,
                    layer.kernel.data().as_ptr(),
                    krows as isize,
                    1,
                    cols.as_ptr(),
                    out_plane as isize,
                    1,
                    1.0,
                    ob.as_mut_ptr(),
                    out_plane as isize,
                    1,
                );
            }
        });
    Ok(out)
}

/// Exact gradients of [`conv2d_forward`] with respect to input, kernel, and
/// bias. Batch elements contribute to the kernel/bias gradients in batch
/// order.
pub fn conv2d_backward(input: &Tensor, layer: &ConvLayer, grad_out: &Tensor) -> Result<ConvGrads> {
    check_input(input, layer, "conv2d_backward")?;
    let [n, in_c, h, w] = input.shape();
    let (out_c, k) = (layer.out_channels(), layer.kernel_size());
    let (oh, ow) = layer.out_size(h, w);
    let expected = [n, out_c, oh, ow];
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            context: "conv2d_backward",
            expected: format!("{expected:?}"),
            got: format!("{:?}", grad_out.shape()),
        });
    }
    let out_plane = oh * ow;
    let krows = in_c * k * k;

    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_kernel = Tensor::zeros(layer.kernel.shape());
    let mut grad_bias = Tensor::zeros(layer.bias.shape());

    // Per-batch-element partial kernel/bias gradients, merged in batch order
    // afterwards so the reduction order never depends on scheduling.
    let in_stride = in_c * h * w;
    let partials: Vec<(Vec<f64>, Vec<f64>)> = grad_input
        .data_mut()
        .par_chunks_mut(in_stride)
        .enumerate()
        .map(|(ni, gin)| {
            let gout = grad_out.batch_slice(ni);
            let mut cols = vec![0.0; krows * out_plane];
            let mut grad_cols = vec![0.0; krows * out_plane];
            let mut gkernel = vec![0.0; out_c * krows];
            let mut gbias = vec![0.0; out_c];
            im2col(
                input.batch_slice(ni),
                in_c,
                h,
                w,
                k,
                layer.padding,
                layer.stride,
                oh,
                ow,
                &mut cols,
            );
            // grad_kernel += gout (out_c x out_plane) @ cols^T (out_plane x krows)
            unsafe {
                matrixmultiply::dgemm(
                    out_c,
                    out_plane,
                    krows,
                    1.0,
                    gout.as_ptr(),
                    out_plane as isize,
                    1,
                    cols.as_ptr(),
                    1,
                    out_plane as isize,
                    0.0,
                    gkernel.as_mut_ptr(),
                    krows as isize,
                    1,
                );
            }
            // grad_cols = kernel^T (krows x out_c) @ gout (out_c x out_plane)
            unsafe {
                matrixmultiply::dgemm(
                    krows,
                    out_c,
                    out_plane,
                    1.0,
                    layer.kernel.data().as_ptr(),
                    1,
                    krows as isize,
                    gout.as_ptr(),
                    out_plane as isize,
                    1,
                    0.0,
                    grad_cols.as_mut_ptr(),
                    out_plane as isize,
                    1,
                );
            }
            col2im(
                &grad_cols,
                in_c,
                h,
                w,
                k,
                layer.padding,
                layer.stride,
                oh,
                ow,
                gin,
            );
            for oc in 0..out_c {
                gbias[oc] = gout[oc * out_plane..(oc + 1) * out_plane].iter().sum();
            }
            (gkernel, gbias)
        })
        .collect();
    for (gkernel, gbias) in &partials {
        for (a, b) in grad_kernel.data_mut().iter_mut().zip(gkernel) {
            *a += *b;
        }
        for (a, b) in grad_bias.data_mut().iter_mut().zip(gbias) {
            *a += *b;
        }
    }
    Ok(ConvGrads {
        input: grad_input,
        kernel: grad_kernel,
        bias: grad_bias,
    })
}
