//! `train`: stage-wise training driven by a manifest and a config file.

use std::path::Path;

use anyhow::{bail, Context, Result};

use dehaze_core::net::Checkpoint;
use dehaze_core::train::{
    model_from_checkpoint, resume_dehazing, train_dehazing, train_refinement, vivid_boost,
    TrainOutcome,
};

use crate::commands::{new_run_dir, progress};
use crate::config::FileConfig;
use crate::manifest::Manifest;

#[derive(Clone, Copy, Debug, PartialEq, clap::ValueEnum)]
pub enum TrainMode {
    Dehaze,
    Refine,
    Ablation,
}

pub fn cmd_train(
    mode: TrainMode,
    config_path: &Path,
    manifest_path: &Path,
    out: &Path,
    resume: Option<&Path>,
) -> Result<()> {
    let cfg = FileConfig::load(config_path)?;
    let manifest = Manifest::load(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    manifest.validate(root)?;
    let train_samples = manifest.load_samples(root, "train")?;
    let val_samples = manifest.load_samples(root, "val")?;
    if train_samples.is_empty() || val_samples.is_empty() {
        bail!("manifest has no train or no val samples");
    }
    let run_dir = new_run_dir(out, cfg.train.seed)?;
    progress!("train: run directory {}", run_dir.display());

    let started = std::time::Instant::now();
    match mode {
        TrainMode::Dehaze | TrainMode::Ablation => {
            let mut train_cfg = cfg.train.clone();
            train_cfg.ablation_no_transmission = mode == TrainMode::Ablation;
            let outcome = match resume {
                Some(ckpt_path) => {
                    let ckpt = Checkpoint::load(ckpt_path)
                        .with_context(|| format!("loading {}", ckpt_path.display()))?;
                    resume_dehazing(&ckpt, &train_samples, &val_samples, &train_cfg)
                }
                None => train_dehazing(&train_samples, &val_samples, &train_cfg),
            }?;
            finish_run(&run_dir, &outcome, started)?;
        }
        TrainMode::Refine => {
            let Some(dehaze_ckpt_path) = resume else {
                bail!(
                    "mode refine needs --resume <dehaze checkpoint>: the frozen dehazing \
                     subnetworks produce the generator's training inputs"
                );
            };
            let dehaze_ckpt = Checkpoint::load(dehaze_ckpt_path)
                .with_context(|| format!("loading {}", dehaze_ckpt_path.display()))?;
            let model = model_from_checkpoint(&dehaze_ckpt).map_err(anyhow::Error::from)?;

            // domain X: dehazed validation images; domain Y: vivid-boosted
            // held-out clear images. Batches are drawn independently.
            let mut dehazed_pool = Vec::with_capacity(val_samples.len());
            let mut target_pool = Vec::with_capacity(val_samples.len());
            for s in &val_samples {
                let (_, dehazed) = model.infer(&s.hazy)?;
                dehazed_pool.push(dehazed);
                target_pool.push(vivid_boost(&s.clear));
            }
            let outcome = train_refinement(&dehazed_pool, &target_pool, &cfg.train)?;

            // embed the frozen dehazing nets so the checkpoint runs standalone
            let mut final_ckpt = outcome.checkpoint.clone();
            for (name, tensor) in &dehaze_ckpt.tensors {
                if !name.starts_with("adam/") {
                    final_ckpt.tensors.insert(name.clone(), tensor.clone());
                }
            }
            let mut phase1 = outcome.phase1_checkpoint.clone();
            for (name, tensor) in &dehaze_ckpt.tensors {
                if !name.starts_with("adam/") {
                    phase1.tensors.insert(name.clone(), tensor.clone());
                }
            }
            phase1.save(&run_dir.join("checkpoint_phase1.ckpt"))?;
            let wrapped = TrainOutcome {
                checkpoint: final_ckpt,
                log: outcome.log,
                completed: outcome.completed,
                abort: outcome.abort,
            };
            finish_run(&run_dir, &wrapped, started)?;
        }
    }
    Ok(())
}

fn finish_run(
    run_dir: &Path,
    outcome: &TrainOutcome,
    started: std::time::Instant,
) -> Result<()> {
    std::fs::write(run_dir.join("train.log"), outcome.log.to_lines())?;
    let ckpt_name = if outcome.completed {
        "checkpoint_final.ckpt"
    } else {
        "checkpoint_lastgood.ckpt"
    };
    outcome.checkpoint.save(&run_dir.join(ckpt_name))?;
    // wall clock lives here, outside the deterministic comparison set
    std::fs::write(
        run_dir.join("run_info.txt"),
        format!(
            "stage={} step={} completed={} wall_seconds={:.3}\n",
            outcome.checkpoint.meta.stage,
            outcome.checkpoint.meta.step,
            outcome.completed,
            started.elapsed().as_secs_f64(),
        ),
    )?;
    if let Some(abort) = &outcome.abort {
        bail!(
            "training aborted at step {}: {} (last-good checkpoint written to {})",
            abort.step,
            abort.reason,
            run_dir.join(ckpt_name).display()
        );
    }
    progress!(
        "train: finished stage {} at step {}",
        outcome.checkpoint.meta.stage,
        outcome.checkpoint.meta.step
    );
    Ok(())
}
