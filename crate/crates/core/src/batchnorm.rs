//! Per-channel batch normalization with running statistics for eval mode.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Batch normalization over the (N, H, W) extent of each channel.
///
/// `gamma`/`beta` are trainable; `running_mean`/`running_var` track batch
/// statistics (momentum 0.1) and drive eval mode.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
}

/// Values cached by the training-mode forward pass for the backward pass.
pub struct BatchNormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        let shape = [1, channels, 1, 1];
        let mut gamma = Tensor::filled(shape, 1.0);
        gamma.ensure_grad();
        let mut beta = Tensor::zeros(shape);
        beta.ensure_grad();
        BatchNorm {
            gamma,
            beta,
            running_mean: Tensor::zeros(shape),
            running_var: Tensor::filled(shape, 1.0),
            eps: BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape()[1]
    }

    fn check_channels(&self, x: &Tensor, context: &'static str) -> Result<()> {
        if x.channels() != self.channels() {
            return Err(Error::ShapeMismatch {
                context,
                expected: format!("{} channels", self.channels()),
                got: format!("{} channels", x.channels()),
            });
        }
        Ok(())
    }

    /// Normalizes with batch statistics and updates the running estimates.
    /// Requires at least 2 values per channel.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, BatchNormCache)> {
        self.check_channels(x, "batch_norm forward_train")?;
        let [n, c, h, w] = x.shape();
        let m = n * h * w;
        if m < 2 {
            return Err(Error::InvalidValue {
                context: "batch_norm forward_train",
                detail: format!("needs at least 2 values per channel, got {m}"),
            });
        }
        let m_f = m as f64;
        let mut out = Tensor::zeros(x.shape());
        let mut xhat = Tensor::zeros(x.shape());
        let mut inv_std = vec![0.0; c];
        for ci in 0..c {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for ni in 0..n {
                for &v in x.plane(ni, ci) {
                    sum += v;
                    sum_sq += v * v;
                }
            }
            let mean = sum / m_f;
            let var = (sum_sq / m_f - mean * mean).max(0.0);
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[ci] = istd;
            let g = self.gamma.data()[ci];
            let b = self.beta.data()[ci];
            for ni in 0..n {
                let xp = x.plane(ni, ci);
                let idx0 = xhat.index(ni, ci, 0, 0);
                for (j, &v) in xp.iter().enumerate() {
                    let xh = (v - mean) * istd;
                    xhat.data_mut()[idx0 + j] = xh;
                    out.data_mut()[idx0 + j] = g * xh + b;
                }
            }
            // keep running stats f32-representable: checkpoints store f32 and
            // eval-mode forwards must be bit-identical across a save/load
            let rm = &mut self.running_mean.data_mut()[ci];
            *rm = (((1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean) as f32) as f64;
            let rv = &mut self.running_var.data_mut()[ci];
            *rv = (((1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * var) as f32) as f64;
        }
        Ok((out, BatchNormCache { xhat, inv_std }))
    }

    /// Normalizes with the stored running statistics.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check_channels(x, "batch_norm forward_eval")?;
        let [n, c, _, _] = x.shape();
        let mut out = Tensor::zeros(x.shape());
        for ci in 0..c {
            let mean = self.running_mean.data()[ci];
            let istd = 1.0 / (self.running_var.data()[ci] + self.eps).sqrt();
            let g = self.gamma.data()[ci];
            let b = self.beta.data()[ci];
            for ni in 0..n {
                let idx0 = out.index(ni, ci, 0, 0);
                for (j, &v) in x.plane(ni, ci).iter().enumerate() {
                    out.data_mut()[idx0 + j] = g * ((v - mean) * istd) + b;
                }
            }
        }
        Ok(out)
    }

    /// Backward through the training-mode normalization. Accumulates
    /// gamma/beta gradients and returns the gradient w.r.t. the input.
    pub fn backward(&mut self, cache: &BatchNormCache, grad_out: &Tensor) -> Result<Tensor> {
        self.check_channels(grad_out, "batch_norm backward")?;
        let [n, c, h, w] = grad_out.shape();
        let m_f = (n * h * w) as f64;
        let mut grad_in = Tensor::zeros(grad_out.shape());
        for ci in 0..c {
            let g = self.gamma.data()[ci];
            let istd = cache.inv_std[ci];
            // per-channel reductions over (N, H, W)
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for ni in 0..n {
                let idx0 = cache.xhat.index(ni, ci, 0, 0);
                for j in 0..h * w {
                    let dy = grad_out.data()[idx0 + j];
                    sum_dy += dy;
                    sum_dy_xhat += dy * cache.xhat.data()[idx0 + j];
                }
            }
            self.gamma.ensure_grad();
            self.gamma.grad_mut().unwrap()[ci] += sum_dy_xhat;
            self.beta.ensure_grad();
            self.beta.grad_mut().unwrap()[ci] += sum_dy;
            for ni in 0..n {
                let idx0 = cache.xhat.index(ni, ci, 0, 0);
                for j in 0..h * w {
                    let dy = grad_out.data()[idx0 + j];
                    let xh = cache.xhat.data()[idx0 + j];
                    grad_in.data_mut()[idx0 + j] =
                        g * istd / m_f * (m_f * dy - sum_dy - xh * sum_dy_xhat);
                }
            }
        }
        Ok(grad_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_channel_maps_to_beta() {
        let mut bn = BatchNorm::new(1);
        bn.beta.data_mut()[0] = 0.7;
        let x = Tensor::filled([2, 1, 3, 3], 4.2);
        let (y, _) = bn.forward_train(&x).unwrap();
        for &v in y.data() {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn standardized_input_passes_through() {
        // zero-mean, unit-sample-variance input with gamma=1, beta=0
        let vals = vec![-1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0];
        let x = Tensor::from_vec([2, 1, 2, 2], vals).unwrap();
        let mut bn = BatchNorm::new(1);
        let (y, _) = bn.forward_train(&x).unwrap();
        assert!(y.max_abs_diff(&x).unwrap() < 1e-4);
    }

    #[test]
    fn single_element_channel_is_rejected_in_train_mode() {
        let mut bn = BatchNorm::new(2);
        let x = Tensor::zeros([1, 2, 1, 1]);
        assert!(bn.forward_train(&x).is_err());
    }

    #[test]
    fn eval_mode_uses_running_statistics() {
        let mut bn = BatchNorm::new(1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // feed the same batch many times so running stats converge to it
        let data: Vec<f64> = (0..32).map(|_| rng.random_range(0.0..1.0)).collect();
        let x = Tensor::from_vec([2, 1, 4, 4], data).unwrap();
        let mut train_out = Tensor::zeros(x.shape());
        for _ in 0..200 {
            train_out = bn.forward_train(&x).unwrap().0;
        }
        let eval_out = bn.forward_eval(&x).unwrap();
        assert!(eval_out.max_abs_diff(&train_out).unwrap() < 1e-6);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec([2, 2, 2, 3], data).unwrap();
        let upstream: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();

        // loss = sum(upstream * bn(x)); keep running stats out of the picture
        // by using a fresh layer for every evaluation
        let loss = |xv: &[f64], gamma: f64, beta: f64| -> f64 {
            let mut bn = BatchNorm::new(2);
            bn.gamma.data_mut().fill(gamma);
            bn.beta.data_mut().fill(beta);
            let xt = Tensor::from_vec([2, 2, 2, 3], xv.to_vec()).unwrap();
            let (y, _) = bn.forward_train(&xt).unwrap();
            y.data().iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };

        let mut bn = BatchNorm::new(2);
        bn.gamma.data_mut().fill(1.3);
        bn.beta.data_mut().fill(-0.2);
        let (_, cache) = bn.forward_train(&x).unwrap();
        let gout = Tensor::from_vec([2, 2, 2, 3], upstream.clone()).unwrap();
        let gin = bn.backward(&cache, &gout).unwrap();

        let h = 1e-5;
        let mut base = x.data().to_vec();
        for i in 0..base.len() {
            let orig = base[i];
            base[i] = orig + h;
            let fp = loss(&base, 1.3, -0.2);
            base[i] = orig - h;
            let fm = loss(&base, 1.3, -0.2);
            base[i] = orig;
            let num = (fp - fm) / (2.0 * h);
            let ana = gin.data()[i];
            let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-8);
            assert!(rel < 1e-3, "input grad {i}: numeric {num} vs analytic {ana}");
        }
    }
}
