//! Quantitative metrics (MSE, PSNR, SSIM) and dataset-level reporting, plus
//! the identity/oracle baselines that bracket any learned model.

use crate::error::{Error, Result};
use crate::haze::{analytic_dehaze, Sample};
use crate::loss::mse_loss;
use crate::ssim::{ssim_map, SsimConfig};
use crate::tensor::Tensor;

/// PSNR reported for identical images instead of +infinity.
pub const PSNR_CAP_DB: f64 = 99.0;
const EIGHT_BIT_FACTOR: f64 = 255.0 * 255.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MseScale {
    /// Images in [0, 1].
    Unit,
    /// Unit-range MSE times 255², matching 8-bit-range reporting.
    EightBit,
}

pub fn mse_metric(pred: &Tensor, truth: &Tensor, scale: MseScale) -> Result<f64> {
    let (mse, _) = mse_loss(pred, truth)?;
    Ok(match scale {
        MseScale::Unit => mse,
        MseScale::EightBit => mse * EIGHT_BIT_FACTOR,
    })
}

/// 10·log10(MAX²/MSE) in dB; the value is the same at unit and 8-bit scale.
/// Identical images report the capped sentinel 99.0 dB.
pub fn psnr_metric(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    let mse = mse_metric(pred, truth, MseScale::Unit)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Mean per-pixel SSIM, computed per channel and averaged.
pub fn ssim_metric(pred: &Tensor, truth: &Tensor, cfg: &SsimConfig) -> Result<f64> {
    Ok(ssim_map(pred, truth, cfg)?.mean())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub mse_unit: f64,
    pub mse_eight_bit: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-image metric rows plus their arithmetic means. Averaged PSNR is the
/// mean of per-image PSNRs, not the PSNR of the mean MSE.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub dataset: String,
    /// How SSIM treats color: recorded so reports are comparable.
    pub ssim_mode: String,
    pub rows: Vec<EvalRow>,
    pub avg_mse_unit: f64,
    pub avg_mse_eight_bit: f64,
    pub avg_psnr: f64,
    pub avg_ssim: f64,
}

impl EvalReport {
    /// Human-readable table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "method={} dataset={} ssim={}\n",
            self.method, self.dataset, self.ssim_mode
        ));
        s.push_str(&format!(
            "{:<12} {:>12} {:>12} {:>8} {:>8}\n",
            "id", "mse_unit", "mse_8bit", "psnr", "ssim"
        ));
        for r in &self.rows {
            s.push_str(&format!(
                "{:<12} {:>12.6} {:>12.2} {:>8.2} {:>8.4}\n",
                r.id, r.mse_unit, r.mse_eight_bit, r.psnr, r.ssim
            ));
        }
        s.push_str(&format!(
            "{:<12} {:>12.6} {:>12.2} {:>8.2} {:>8.4}\n",
            "average", self.avg_mse_unit, self.avg_mse_eight_bit, self.avg_psnr, self.avg_ssim
        ));
        s
    }

    /// Machine-readable rows: comment header naming the method, a column
    /// header, one CSV row per image, and an average row.
    pub fn to_delimited(&self) -> String {
        let mut s = format!(
            "# method={} dataset={} ssim={}\n",
            self.method, self.dataset, self.ssim_mode
        );
        s.push_str("method,id,mse_unit,mse_8bit,psnr,ssim\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.method, r.id, r.mse_unit, r.mse_eight_bit, r.psnr, r.ssim
            ));
        }
        s.push_str(&format!(
            "{},average,{},{},{},{}\n",
            self.method, self.avg_mse_unit, self.avg_mse_eight_bit, self.avg_psnr, self.avg_ssim
        ));
        s
    }
}

/// Scores aligned output/truth pairs. Rows are indexed "0000", "0001", ...
pub fn evaluate_dataset(
    outputs: &[Tensor],
    truths: &[Tensor],
    method: &str,
    dataset: &str,
    cfg: &SsimConfig,
) -> Result<EvalReport> {
    if outputs.len() != truths.len() {
        return Err(Error::ShapeMismatch {
            context: "evaluate_dataset",
            expected: format!("{} truths", outputs.len()),
            got: format!("{}", truths.len()),
        });
    }
    if outputs.is_empty() {
        return Err(Error::EmptyDataset("evaluate_dataset"));
    }
    let mut rows = Vec::with_capacity(outputs.len());
    for (i, (out, truth)) in outputs.iter().zip(truths).enumerate() {
        let mse_unit = mse_metric(out, truth, MseScale::Unit)?;
        rows.push(EvalRow {
            id: format!("{i:04}"),
            mse_unit,
            mse_eight_bit: mse_unit * EIGHT_BIT_FACTOR,
            psnr: psnr_metric(out, truth)?,
            ssim: ssim_metric(out, truth, cfg)?,
        });
    }
    let n = rows.len() as f64;
    Ok(EvalReport {
        method: method.to_string(),
        dataset: dataset.to_string(),
        ssim_mode: "per-channel-mean".to_string(),
        avg_mse_unit: rows.iter().map(|r| r.mse_unit).sum::<f64>() / n,
        avg_mse_eight_bit: rows.iter().map(|r| r.mse_eight_bit).sum::<f64>() / n,
        avg_psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        avg_ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        rows,
    })
}

/// Two reports that bracket any learned model on a synthetic dataset:
/// "identity" scores the raw hazy images (the floor), "oracle" scores the
/// analytic inversion with ground-truth transmission and airlight (the
/// ceiling).
pub fn baseline_report(
    samples: &[Sample],
    dataset: &str,
    cfg: &SsimConfig,
) -> Result<(EvalReport, EvalReport)> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("baseline_report"));
    }
    let truths: Vec<Tensor> = samples.iter().map(|s| s.clear.clone()).collect();
    let hazy: Vec<Tensor> = samples.iter().map(|s| s.hazy.clone()).collect();
    let oracle: Vec<Tensor> = samples
        .iter()
        .map(|s| analytic_dehaze(&s.hazy, &s.transmission, s.params.atmos_light))
        .collect::<Result<_>>()?;
    let identity = evaluate_dataset(&hazy, &truths, "identity", dataset, cfg)?;
    let oracle = evaluate_dataset(&oracle, &truths, "oracle", dataset, cfg)?;
    Ok((identity, oracle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haze::build_dataset;
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
    fn identical_images_score_perfectly() {
        let x = random_image(1, [1, 3, 16, 16]);
        assert_eq!(mse_metric(&x, &x, MseScale::Unit).unwrap(), 0.0);
        assert_eq!(psnr_metric(&x, &x).unwrap(), PSNR_CAP_DB);
        assert!((ssim_metric(&x, &x, &SsimConfig::default()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_difference_at_eight_bit_scale() {
        let a = Tensor::filled([1, 3, 4, 4], 0.5);
        let b = Tensor::filled([1, 3, 4, 4], 0.4);
        let mse = mse_metric(&a, &b, MseScale::EightBit).unwrap();
        assert!((mse - 0.01 * 65025.0).abs() < 1e-6, "got {mse}");
    }

    #[test]
    fn eight_bit_scale_is_a_constant_factor() {
        let a = random_image(2, [1, 3, 8, 8]);
        let b = random_image(3, [1, 3, 8, 8]);
        let unit = mse_metric(&a, &b, MseScale::Unit).unwrap();
        let eight = mse_metric(&a, &b, MseScale::EightBit).unwrap();
        assert!((eight - unit * 65025.0).abs() < 1e-9);
    }

    #[test]
    fn reported_mse_psnr_pairs_are_consistent() {
        // MSE 2053 at 8-bit scale corresponds to 15.0 dB
        let psnr = 10.0 * (65025.0f64 / 2053.0).log10();
        assert!((psnr - 15.0).abs() < 0.05, "got {psnr}");
    }

    #[test]
    fn worst_case_mse_gives_zero_db() {
        let a = Tensor::filled([1, 1, 13, 13], 0.0);
        let b = Tensor::filled([1, 1, 13, 13], 1.0);
        let psnr = psnr_metric(&a, &b).unwrap();
        assert!(psnr.abs() < 1e-12);
    }

    #[test]
    fn psnr_decreases_as_mse_grows() {
        let truth = Tensor::filled([1, 1, 13, 13], 0.5);
        let mut prev = f64::INFINITY;
        for offset in [0.01, 0.05, 0.1, 0.2, 0.4] {
            let pred = truth.map(|v| v + offset);
            let psnr = psnr_metric(&pred, &truth).unwrap();
            assert!(psnr < prev);
            prev = psnr;
        }
    }

    #[test]
    fn ssim_metric_is_symmetric_and_matches_loss() {
        let a = random_image(4, [1, 1, 14, 14]);
        let b = random_image(5, [1, 1, 14, 14]);
        let cfg = SsimConfig::default();
        let ab = ssim_metric(&a, &b, &cfg).unwrap();
        let ba = ssim_metric(&b, &a, &cfg).unwrap();
        assert!((ab - ba).abs() < 1e-9);
        let (loss, _) = crate::ssim::ssim_loss(&a, &b, &cfg).unwrap();
        assert!((ab - (1.0 - loss)).abs() < 1e-9);
    }

    #[test]
    fn report_on_perfect_outputs() {
        let imgs: Vec<Tensor> = (0..3).map(|i| random_image(10 + i, [1, 3, 16, 16])).collect();
        let report =
            evaluate_dataset(&imgs, &imgs, "test", "unit", &SsimConfig::default()).unwrap();
        assert_eq!(report.avg_mse_unit, 0.0);
        assert_eq!(report.avg_psnr, PSNR_CAP_DB);
        assert!((report.avg_ssim - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_image_report_equals_its_row() {
        let a = vec![random_image(20, [1, 3, 16, 16])];
        let b = vec![random_image(21, [1, 3, 16, 16])];
        let report = evaluate_dataset(&a, &b, "m", "d", &SsimConfig::default()).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.avg_mse_unit, report.rows[0].mse_unit);
        assert_eq!(report.avg_psnr, report.rows[0].psnr);
        assert_eq!(report.avg_ssim, report.rows[0].ssim);
    }

    #[test]
    fn averages_are_recomputable_from_rows() {
        let a: Vec<Tensor> = (0..4).map(|i| random_image(30 + i, [1, 3, 16, 16])).collect();
        let b: Vec<Tensor> = (0..4).map(|i| random_image(40 + i, [1, 3, 16, 16])).collect();
        let report = evaluate_dataset(&a, &b, "m", "d", &SsimConfig::default()).unwrap();
        let n = report.rows.len() as f64;
        let mse: f64 = report.rows.iter().map(|r| r.mse_unit).sum::<f64>() / n;
        let psnr: f64 = report.rows.iter().map(|r| r.psnr).sum::<f64>() / n;
        let ssim: f64 = report.rows.iter().map(|r| r.ssim).sum::<f64>() / n;
        assert!((report.avg_mse_unit - mse).abs() < 1e-9);
        assert!((report.avg_psnr - psnr).abs() < 1e-9);
        assert!((report.avg_ssim - ssim).abs() < 1e-9);
    }

    #[test]
    fn per_row_psnr_matches_the_definition_exactly() {
        let a: Vec<Tensor> = (0..3).map(|i| random_image(50 + i, [1, 3, 16, 16])).collect();
        let b: Vec<Tensor> = (0..3).map(|i| random_image(60 + i, [1, 3, 16, 16])).collect();
        let report = evaluate_dataset(&a, &b, "m", "d", &SsimConfig::default()).unwrap();
        for r in &report.rows {
            let expect = 10.0 * (65025.0 / r.mse_eight_bit).log10();
            assert!((r.psnr - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let a = vec![random_image(70, [1, 3, 16, 16])];
        assert!(evaluate_dataset(&a, &[], "m", "d", &SsimConfig::default()).is_err());
    }

    #[test]
    fn baselines_bracket_as_expected() {
        let (train, _) = build_dataset(5, 4, 0, 2, 24, 32);
        let cfg = SsimConfig::default();
        let (identity, oracle) = baseline_report(&train, "desk", &cfg).unwrap();
        assert!(
            oracle.avg_ssim > identity.avg_ssim,
            "oracle {} vs identity {}",
            oracle.avg_ssim,
            identity.avg_ssim
        );
        // transmission never falls below T_MIN here, so inversion is exact
        assert!(oracle.avg_mse_unit < 1e-4, "oracle mse {}", oracle.avg_mse_unit);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(baseline_report(&[], "d", &SsimConfig::default()).is_err());
    }
}
