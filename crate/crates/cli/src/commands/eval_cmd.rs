//! `eval`: metric reports over a manifest split, with identity and oracle
//! baselines bracketing the learned results.

use std::path::Path;

use anyhow::{bail, Context, Result};

use dehaze_core::eval::{baseline_report, evaluate_dataset, EvalReport};
use dehaze_core::net::Checkpoint;
use dehaze_core::ssim::SsimConfig;
use dehaze_core::train::{generator_from_checkpoint, model_from_checkpoint};
use dehaze_core::Tensor;

use crate::commands::progress;
use crate::config::FileConfig;
use crate::manifest::Manifest;

pub fn cmd_eval(
    ckpt_path: &Path,
    manifest_path: &Path,
    split: &str,
    out: &Path,
    config_path: Option<&Path>,
) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)
        .with_context(|| format!("loading checkpoint {}", ckpt_path.display()))?;
    let manifest = Manifest::load(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let samples = manifest.load_samples(root, split)?;
    if samples.is_empty() {
        bail!("split `{split}` is empty");
    }
    let cfg = match config_path {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let ssim_cfg = if cfg.eval_ssim == "classical" {
        SsimConfig::classical()
    } else {
        cfg.train.ssim
    };
    let dataset_tag = format!("{}:{split}", manifest_path.display());

    let model = model_from_checkpoint(&ckpt).map_err(anyhow::Error::from)?;
    let truths: Vec<Tensor> = samples.iter().map(|s| s.clear.clone()).collect();
    let mut dehazed = Vec::with_capacity(samples.len());
    for s in &samples {
        dehazed.push(model.infer(&s.hazy)?.1);
    }
    let mut reports: Vec<EvalReport> = Vec::new();
    let (identity, oracle) = baseline_report(&samples, &dataset_tag, &ssim_cfg)?;
    reports.push(identity);
    reports.push(oracle);
    reports.push(evaluate_dataset(
        &dehazed,
        &truths,
        "dehazed",
        &dataset_tag,
        &ssim_cfg,
    )?);
    if ckpt.has_prefix("generator") {
        let generator = generator_from_checkpoint(&ckpt).map_err(anyhow::Error::from)?;
        let mut refined = Vec::with_capacity(dehazed.len());
        for d in &dehazed {
            refined.push(generator.forward_eval(d)?.clamped(0.0, 1.0));
        }
        reports.push(evaluate_dataset(
            &refined,
            &truths,
            "refined",
            &dataset_tag,
            &ssim_cfg,
        )?);
    }

    let mut delimited = String::new();
    let mut table = String::new();
    for report in &reports {
        delimited.push_str(&report.to_delimited());
        table.push_str(&report.to_table());
        table.push('\n');
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(out, &delimited)
        .with_context(|| format!("writing report {}", out.display()))?;
    let table_path = out.with_extension("txt");
    std::fs::write(&table_path, &table)?;
    progress!(
        "eval: wrote {} and {} ({} methods, {} images)",
        out.display(),
        table_path.display(),
        reports.len(),
        samples.len()
    );
    Ok(())
}
