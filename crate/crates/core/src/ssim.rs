//! Per-pixel structural similarity and the SSIM loss, with an analytic
//! gradient through all patch statistics.
//!
//! SSIM(p) = (2 μx μy + C1)/(μx² + μy² + C1) · (2 σxy + C2)/(σx² + σy² + C2),
//! with patch means/variances/covariance taken over a window centered at
//! every pixel. Borders are handled by reflecting the image (index -i maps
//! to i), so every pixel keeps a full window and the per-image pixel count
//! stays M = H·W. Multi-channel inputs are scored per channel and averaged.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WindowKind {
    /// Plain patch statistics: every pixel in the window weighs 1/(k·k).
    Uniform,
    /// Gaussian-weighted window, for comparability with classical SSIM.
    Gaussian { sigma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConfig {
    pub patch_size: usize,
    pub c1: f64,
    pub c2: f64,
    pub window: WindowKind,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            patch_size: 13,
            c1: 0.02,
            c2: 0.03,
            window: WindowKind::Uniform,
        }
    }
}

impl SsimConfig {
    /// The classical SSIM setup: 11×11 Gaussian window (σ = 1.5) and
    /// constants (K1·L)², (K2·L)² with K1 = 0.01, K2 = 0.03, L = 1.
    pub fn classical() -> Self {
        SsimConfig {
            patch_size: 11,
            c1: 0.01f64 * 0.01,
            c2: 0.03f64 * 0.03,
            window: WindowKind::Gaussian { sigma: 1.5 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 3 || self.patch_size % 2 == 0 {
            return Err(Error::InvalidValue {
                context: "SsimConfig",
                detail: format!("patch_size must be odd and >= 3, got {}", self.patch_size),
            });
        }
        if self.c1 <= 0.0 || self.c2 <= 0.0 {
            return Err(Error::InvalidValue {
                context: "SsimConfig",
                detail: format!("C1 and C2 must be positive, got {} and {}", self.c1, self.c2),
            });
        }
        Ok(())
    }

    /// Normalized 1-D window weights (the 2-D window is their outer product).
    pub fn weights(&self) -> Vec<f64> {
        let k = self.patch_size;
        let mut w = match self.window {
            WindowKind::Uniform => vec![1.0; k],
            WindowKind::Gaussian { sigma } => {
                let mid = (k / 2) as f64;
                (0..k)
                    .map(|i| (-((i as f64 - mid).powi(2)) / (2.0 * sigma * sigma)).exp())
                    .collect()
            }
        };
        let sum: f64 = w.iter().sum();
        for v in &mut w {
            *v /= sum;
        }
        w
    }
}

/// Reflected index (edge-exclusive): -1 maps to 1, len maps to len-2.
#[inline]
fn reflect(i: isize, len: usize) -> usize {
    if i < 0 {
        (-i) as usize
    } else if i >= len as isize {
        2 * len - 2 - i as usize
    } else {
        i as usize
    }
}

fn check_size(h: usize, w: usize, cfg: &SsimConfig) -> Result<()> {
    cfg.validate()?;
    if h < cfg.patch_size || w < cfg.patch_size {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            patch: cfg.patch_size,
        });
    }
    Ok(())
}

/// Copies a plane into an (h+2r)×(w+2r) buffer with reflected borders.
fn reflect_pad(src: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let mut out = vec![0.0; ph * pw];
    for i in 0..ph {
        let sy = reflect(i as isize - r as isize, h);
        for j in 0..pw {
            let sx = reflect(j as isize - r as isize, w);
            out[i * pw + j] = src[sy * w + sx];
        }
    }
    out
}

/// Weighted window mean of a padded plane, evaluated at every output pixel.
/// Separable: a horizontal pass over all padded rows, then a vertical pass.
fn windowed_mean(padded: &[f64], h: usize, w: usize, r: usize, wts: &[f64]) -> Vec<f64> {
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let k = wts.len();
    let mut horiz = vec![0.0; ph * w];
    for row in 0..ph {
        let src = &padded[row * pw..(row + 1) * pw];
        let dst = &mut horiz[row * w..(row + 1) * w];
        for (u, &wu) in wts.iter().enumerate().take(k) {
            for x in 0..w {
                dst[x] += wu * src[x + u];
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for (v, &wv) in wts.iter().enumerate().take(k) {
        for y in 0..h {
            let src = &horiz[(y + v) * w..(y + v + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for x in 0..w {
                dst[x] += wv * src[x];
            }
        }
    }
    out
}

/// Adjoint of [`windowed_mean`]: scatters per-pixel coefficients back onto
/// the padded grid through the window weights.
fn windowed_scatter(coeff: &[f64], h: usize, w: usize, r: usize, wts: &[f64]) -> Vec<f64> {
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let k = wts.len();
    let mut vert = vec![0.0; ph * w];
    for (v, &wv) in wts.iter().enumerate().take(k) {
        for y in 0..h {
            let src = &coeff[y * w..(y + 1) * w];
            let dst = &mut vert[(y + v) * w..(y + v + 1) * w];
            for x in 0..w {
                dst[x] += wv * src[x];
            }
        }
    }
    let mut out = vec![0.0; ph * pw];
    for row in 0..ph {
        let src = &vert[row * w..(row + 1) * w];
        let dst = &mut out[row * pw..(row + 1) * pw];
        for (u, &wu) in wts.iter().enumerate().take(k) {
            for x in 0..w {
                dst[x + u] += wu * src[x];
            }
        }
    }
    out
}

/// Adjoint of [`reflect_pad`]: folds padded-grid gradients back onto their
/// source pixels.
fn reflect_fold(gpad: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let pw = w + 2 * r;
    let mut out = vec![0.0; h * w];
    for i in 0..h + 2 * r {
        let sy = reflect(i as isize - r as isize, h);
        for j in 0..pw {
            let sx = reflect(j as isize - r as isize, w);
            out[sy * w + sx] += gpad[i * pw + j];
        }
    }
    out
}

struct PlaneStats {
    xp: Vec<f64>,
    yp: Vec<f64>,
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    sig_x: Vec<f64>,
    sig_y: Vec<f64>,
    sig_xy: Vec<f64>,
}

fn plane_stats(x: &[f64], y: &[f64], h: usize, w: usize, cfg: &SsimConfig) -> PlaneStats {
    let r = (cfg.patch_size - 1) / 2;
    let wts = cfg.weights();
    let xp = reflect_pad(x, h, w, r);
    let yp = reflect_pad(y, h, w, r);
    let xx: Vec<f64> = xp.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = yp.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = xp.iter().zip(&yp).map(|(a, b)| a * b).collect();
    let mu_x = windowed_mean(&xp, h, w, r, &wts);
    let mu_y = windowed_mean(&yp, h, w, r, &wts);
    let m_xx = windowed_mean(&xx, h, w, r, &wts);
    let m_yy = windowed_mean(&yy, h, w, r, &wts);
    let m_xy = windowed_mean(&xy, h, w, r, &wts);
    let n = h * w;
    let mut sig_x = vec![0.0; n];
    let mut sig_y = vec![0.0; n];
    let mut sig_xy = vec![0.0; n];
    for i in 0..n {
        sig_x[i] = m_xx[i] - mu_x[i] * mu_x[i];
        sig_y[i] = m_yy[i] - mu_y[i] * mu_y[i];
        sig_xy[i] = m_xy[i] - mu_x[i] * mu_y[i];
    }
    PlaneStats {
        xp,
        yp,
        mu_x,
        mu_y,
        sig_x,
        sig_y,
        sig_xy,
    }
}

fn plane_ssim(stats: &PlaneStats, cfg: &SsimConfig) -> Vec<f64> {
    stats
        .mu_x
        .iter()
        .zip(&stats.mu_y)
        .zip(stats.sig_x.iter().zip(&stats.sig_y))
        .zip(&stats.sig_xy)
        .map(|(((&mx, &my), (&sx, &sy)), &sxy)| {
            let a1 = 2.0 * mx * my + cfg.c1;
            let b1 = mx * mx + my * my + cfg.c1;
            let a2 = 2.0 * sxy + cfg.c2;
            let b2 = sx + sy + cfg.c2;
            (a1 * a2) / (b1 * b2)
        })
        .collect()
}

/// Per-pixel SSIM between `x` and `y`, channel by channel. Output has the
/// same shape; values lie in [-1, 1].
pub fn ssim_map(x: &Tensor, y: &Tensor, cfg: &SsimConfig) -> Result<Tensor> {
    x.check_same_shape(y, "ssim_map")?;
    let [n, c, h, w] = x.shape();
    check_size(h, w, cfg)?;
    let mut out = Tensor::zeros(x.shape());
    for ni in 0..n {
        for ci in 0..c {
            let stats = plane_stats(x.plane(ni, ci), y.plane(ni, ci), h, w, cfg);
            out.plane_mut(ni, ci).copy_from_slice(&plane_ssim(&stats, cfg));
        }
    }
    Ok(out)
}

/// SSIM loss 1 − mean SSIM (mean over batch, channels, and all M = H·W
/// pixels), together with its gradient with respect to `x`. Value lies in
/// [0, 2].
pub fn ssim_loss(x: &Tensor, y: &Tensor, cfg: &SsimConfig) -> Result<(f64, Tensor)> {
    x.check_same_shape(y, "ssim_loss")?;
    let [n, c, h, w] = x.shape();
    check_size(h, w, cfg)?;
    let r = (cfg.patch_size - 1) / 2;
    let wts = cfg.weights();
    let m = (h * w) as f64;
    let upstream = -1.0 / (n as f64 * c as f64 * m); // dL/dSSIM(p)

    let mut total = 0.0;
    let mut grad = Tensor::zeros(x.shape());
    for ni in 0..n {
        for ci in 0..c {
            let stats = plane_stats(x.plane(ni, ci), y.plane(ni, ci), h, w, cfg);
            let ssim = plane_ssim(&stats, cfg);
            total += ssim.iter().sum::<f64>();

            // Coefficients of the chain rule through (μx, σx², σxy) per pixel.
            let len = h * w;
            let mut c_mu = vec![0.0; len];
            let mut c_var = vec![0.0; len];
            let mut c_cov = vec![0.0; len];
            let mut c_var_mu = vec![0.0; len];
            let mut c_cov_mu = vec![0.0; len];
            for i in 0..len {
                let (mx, my) = (stats.mu_x[i], stats.mu_y[i]);
                let a1 = 2.0 * mx * my + cfg.c1;
                let b1 = mx * mx + my * my + cfg.c1;
                let a2 = 2.0 * stats.sig_xy[i] + cfg.c2;
                let b2 = stats.sig_x[i] + stats.sig_y[i] + cfg.c2;
                let l = a1 / b1;
                let cs = a2 / b2;
                let d_mu = cs * 2.0 * (my * b1 - mx * a1) / (b1 * b1);
                let d_var = -l * a2 / (b2 * b2);
                let d_cov = 2.0 * l / b2;
                c_mu[i] = upstream * d_mu;
                c_var[i] = upstream * d_var;
                c_cov[i] = upstream * d_cov;
                c_var_mu[i] = c_var[i] * mx;
                c_cov_mu[i] = c_cov[i] * my;
            }

            // d stats / d xp(q): μx contributes w(q-p); σx² contributes
            // 2(xp(q) − μx(p))·w(q-p); σxy contributes (yp(q) − μy(p))·w(q-p).
            let s_mu = windowed_scatter(&c_mu, h, w, r, &wts);
            let s_var = windowed_scatter(&c_var, h, w, r, &wts);
            let s_var_mu = windowed_scatter(&c_var_mu, h, w, r, &wts);
            let s_cov = windowed_scatter(&c_cov, h, w, r, &wts);
            let s_cov_mu = windowed_scatter(&c_cov_mu, h, w, r, &wts);
            let plen = (h + 2 * r) * (w + 2 * r);
            let mut gpad = vec![0.0; plen];
            for q in 0..plen {
                gpad[q] = s_mu[q] + 2.0 * (stats.xp[q] * s_var[q] - s_var_mu[q])
                    + (stats.yp[q] * s_cov[q] - s_cov_mu[q]);
            }
            grad.plane_mut(ni, ci)
                .copy_from_slice(&reflect_fold(&gpad, h, w, r));
        }
    }
    let loss = 1.0 - total / (n as f64 * c as f64 * m);
    Ok((loss, grad))
}
