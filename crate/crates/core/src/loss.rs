//! The training losses: MSE, adversarial, and the per-subnetwork weighted
//! totals, each with value and gradient.

use crate::error::{Error, Result};
use crate::ssim::{ssim_loss, SsimConfig};
use crate::tensor::Tensor;

/// Weight of the adversarial term in the generator objective.
pub const ADV_WEIGHT: f64 = 1e-3;
/// Floor for log arguments in the adversarial losses.
const LOG_EPS: f64 = 1e-7;

/// Named loss components plus their weighted total.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub components: Vec<(String, f64)>,
    pub total: f64,
}

impl LossReport {
    pub fn component(&self, name: &str) -> Option<f64> {
        self.components
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }

    /// Sum of the stored components; equals `total` by construction.
    pub fn component_sum(&self) -> f64 {
        self.components.iter().map(|(_, v)| v).sum()
    }
}

/// Mean squared error over all elements, with gradient 2(pred − target)/count.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    pred.check_same_shape(target, "mse_loss")?;
    let count = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, &p), &t) in grad
        .data_mut()
        .iter_mut()
        .zip(pred.data())
        .zip(target.data())
    {
        let d = p - t;
        loss += d * d;
        *g = 2.0 * d / count;
    }
    Ok((loss / count, grad))
}

/// Discriminator and generator objectives for post-sigmoid scores.
///
/// The discriminator maximizes E[log D(y)] + E[log(1 − D(fake))], i.e. it
/// minimizes the negation. The generator uses the non-saturating form
/// −E[log D(fake)]. Scores must lie strictly inside (0, 1).
pub struct AdversarialLosses {
    pub discriminator_loss: f64,
    pub generator_loss: f64,
    pub grad_real: Tensor,
    /// Gradient of the discriminator loss w.r.t. the fake scores.
    pub grad_fake_discriminator: Tensor,
    /// Gradient of the generator loss w.r.t. the fake scores.
    pub grad_fake_generator: Tensor,
}

pub fn adversarial_losses(d_real: &Tensor, d_fake: &Tensor) -> Result<AdversarialLosses> {
    for (t, which) in [(d_real, "D(real)"), (d_fake, "D(fake)")] {
        if t.is_empty() || t.min_value() <= 0.0 || t.max_value() >= 1.0 {
            return Err(Error::InvalidValue {
                context: "adversarial_losses",
                detail: format!(
                    "{which} scores must lie strictly in (0, 1), got range [{}, {}]",
                    t.min_value(),
                    t.max_value()
                ),
            });
        }
    }
    let n_real = d_real.len() as f64;
    let n_fake = d_fake.len() as f64;

    let mut d_loss = 0.0;
    let mut grad_real = Tensor::zeros(d_real.shape());
    for (g, &d) in grad_real.data_mut().iter_mut().zip(d_real.data()) {
        d_loss -= d.max(LOG_EPS).ln() / n_real;
        *g = if d > LOG_EPS { -1.0 / (n_real * d) } else { 0.0 };
    }

    let mut g_loss = 0.0;
    let mut grad_fake_d = Tensor::zeros(d_fake.shape());
    let mut grad_fake_g = Tensor::zeros(d_fake.shape());
    for ((gd, gg), &d) in grad_fake_d
        .data_mut()
        .iter_mut()
        .zip(grad_fake_g.data_mut())
        .zip(d_fake.data())
    {
        let one_minus = 1.0 - d;
        d_loss -= one_minus.max(LOG_EPS).ln() / n_fake;
        *gd = if one_minus > LOG_EPS {
            1.0 / (n_fake * one_minus)
        } else {
            0.0
        };
        g_loss -= d.max(LOG_EPS).ln() / n_fake;
        *gg = if d > LOG_EPS { -1.0 / (n_fake * d) } else { 0.0 };
    }

    Ok(AdversarialLosses {
        discriminator_loss: d_loss,
        generator_loss: g_loss,
        grad_real,
        grad_fake_discriminator: grad_fake_d,
        grad_fake_generator: grad_fake_g,
    })
}

/// Transmission-prediction objective: coarse MSE + fine MSE + fine SSIM,
/// unit weights.
pub struct TpLoss {
    pub report: LossReport,
    pub grad_coarse: Tensor,
    pub grad_fine: Tensor,
}

pub fn tp_total(
    coarse_pred: &Tensor,
    fine_pred: &Tensor,
    t_true: &Tensor,
    cfg: &SsimConfig,
) -> Result<TpLoss> {
    let (cs_mse, grad_coarse) = mse_loss(coarse_pred, t_true)?;
    let (fs_mse, g_mse) = mse_loss(fine_pred, t_true)?;
    let (fs_ssim, g_ssim) = ssim_loss(fine_pred, t_true, cfg)?;
    let grad_fine = g_mse.add(&g_ssim)?;
    let total = cs_mse + fs_mse + fs_ssim;
    Ok(TpLoss {
        report: LossReport {
            components: vec![
                ("cs_mse".into(), cs_mse),
                ("fs_mse".into(), fs_mse),
                ("fs_ssim".into(), fs_ssim),
            ],
            total,
        },
        grad_coarse,
        grad_fine,
    })
}

/// Haze-removal objective on the residual output: MSE + SSIM of
/// (residual + hazy) against the clear target.
pub struct DehazeLoss {
    pub report: LossReport,
    pub grad_residual: Tensor,
}

pub fn d_total(
    residual: &Tensor,
    hazy: &Tensor,
    clear: &Tensor,
    cfg: &SsimConfig,
) -> Result<DehazeLoss> {
    let pred = residual.add(hazy)?;
    let (d_mse, g_mse) = mse_loss(&pred, clear)?;
    let (d_ssim, g_ssim) = ssim_loss(&pred, clear, cfg)?;
    let grad_residual = g_mse.add(&g_ssim)?;
    Ok(DehazeLoss {
        report: LossReport {
            components: vec![("d_mse".into(), d_mse), ("d_ssim".into(), d_ssim)],
            total: d_mse + d_ssim,
        },
        grad_residual,
    })
}

/// Non-saturating generator objective −E[log D(fake)] with its gradient.
fn generator_adversarial(d_fake: &Tensor) -> Result<(f64, Tensor)> {
    if d_fake.is_empty() || d_fake.min_value() <= 0.0 || d_fake.max_value() >= 1.0 {
        return Err(Error::InvalidValue {
            context: "generator_adversarial",
            detail: format!(
                "D(fake) scores must lie strictly in (0, 1), got range [{}, {}]",
                d_fake.min_value(),
                d_fake.max_value()
            ),
        });
    }
    let n = d_fake.len() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(d_fake.shape());
    for (g, &d) in grad.data_mut().iter_mut().zip(d_fake.data()) {
        loss -= d.max(LOG_EPS).ln() / n;
        *g = if d > LOG_EPS { -1.0 / (n * d) } else { 0.0 };
    }
    Ok((loss, grad))
}

/// Refinement objective: content MSE + SSIM against the generator's own
/// input, plus the adversarial term weighted by [`ADV_WEIGHT`].
pub struct RefineLoss {
    pub report: LossReport,
    pub grad_refined: Tensor,
    /// Gradient of the weighted adversarial term w.r.t. D(fake); backprop it
    /// through the discriminator to reach the refined image.
    pub grad_d_fake: Tensor,
}

pub fn rf_total(
    refined: &Tensor,
    dehazed_input: &Tensor,
    d_fake: &Tensor,
    cfg: &SsimConfig,
    adv_weight: f64,
) -> Result<RefineLoss> {
    let (rf_mse, g_mse) = mse_loss(refined, dehazed_input)?;
    let (rf_ssim, g_ssim) = ssim_loss(refined, dehazed_input, cfg)?;
    let (gan, gan_grad) = generator_adversarial(d_fake)?;
    let grad_refined = g_mse.add(&g_ssim)?;
    let grad_d_fake = gan_grad.scale(adv_weight);
    let total = rf_mse + rf_ssim + adv_weight * gan;
    Ok(RefineLoss {
        report: LossReport {
            components: vec![
                ("rf_mse".into(), rf_mse),
                ("rf_ssim".into(), rf_ssim),
                ("gan_g".into(), adv_weight * gan),
            ],
            total,
        },
        grad_refined,
        grad_d_fake,
    })
}
