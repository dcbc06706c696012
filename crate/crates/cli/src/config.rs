//! Flat `key = value` config files. Unknown keys are hard errors so typos
//! in experiment sweeps surface immediately.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

use dehaze_core::adam::AdamConfig;
use dehaze_core::ssim::{SsimConfig, WindowKind};
use dehaze_core::train::TrainConfig;

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "height",
    "width",
    "train_scenes",
    "val_scenes",
    "samples_per_scene",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
    "batch_size_dehaze",
    "batch_size_refine",
    "steps_dehaze",
    "refine_phase1_steps",
    "refine_phase2_steps",
    "val_cadence",
    "checkpoint_cadence",
    "ssim_patch",
    "ssim_c1",
    "ssim_c2",
    "ssim_window",
    "ssim_sigma",
    "adv_weight",
    "removal_blocks",
    "removal_layers_per_block",
    "removal_filters",
    "generator_layers",
    "generator_filters",
    "generator_skips",
    "phase1_early_stop_window",
    "phase1_early_stop_rel",
    "eval_ssim",
    "rgbd_list",
];

/// Parsed configuration: training hyperparameters plus synthesis scale.
#[derive(Clone, Debug)]
pub struct FileConfig {
    pub train: TrainConfig,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub samples_per_scene: usize,
    /// SSIM used by `eval` reports: "internal" (the training window) or
    /// "classical" (11x11 Gaussian with the conventional constants).
    pub eval_ssim: String,
    /// Optional list file of `image_path depth_path` pairs replacing the
    /// procedural scenes.
    pub rgbd_list: Option<String>,
    /// Raw key/value pairs, for the manifest snapshot.
    pub entries: BTreeMap<String, String>,
}

impl Default for FileConfig {
    fn default() -> Self {
        FileConfig {
            train: TrainConfig::default(),
            train_scenes: 64,
            val_scenes: 16,
            samples_per_scene: 4,
            eval_ssim: "internal".to_string(),
            rgbd_list: None,
            entries: BTreeMap::new(),
        }
    }
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut unknown = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {} is not `key = value`: `{raw}`", lineno + 1);
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                unknown.push(key.clone());
                continue;
            }
            if entries.insert(key.clone(), value).is_some() {
                bail!("config key `{key}` appears twice");
            }
        }
        if !unknown.is_empty() {
            bail!("unknown config keys: {}", unknown.join(", "));
        }

        let mut cfg = FileConfig {
            entries: entries.clone(),
            ..FileConfig::default()
        };
        let get = |k: &str| entries.get(k);
        macro_rules! set {
            ($key:literal, $target:expr, $ty:ty) => {
                if let Some(v) = get($key) {
                    $target = v
                        .parse::<$ty>()
                        .with_context(|| format!("config key `{}` = `{v}`", $key))?;
                }
            };
        }
        set!("seed", cfg.train.seed, u64);
        set!("height", cfg.train.height, usize);
        set!("width", cfg.train.width, usize);
        set!("train_scenes", cfg.train_scenes, usize);
        set!("val_scenes", cfg.val_scenes, usize);
        set!("samples_per_scene", cfg.samples_per_scene, usize);
        let mut adam = AdamConfig::default();
        set!("learning_rate", adam.learning_rate, f64);
        set!("adam_beta1", adam.beta1, f64);
        set!("adam_beta2", adam.beta2, f64);
        set!("adam_epsilon", adam.epsilon, f64);
        cfg.train.adam = adam;
        set!("batch_size_dehaze", cfg.train.batch_size_dehaze, usize);
        set!("batch_size_refine", cfg.train.batch_size_refine, usize);
        set!("steps_dehaze", cfg.train.steps_dehaze, usize);
        set!("refine_phase1_steps", cfg.train.refine_phase1_steps, usize);
        set!("refine_phase2_steps", cfg.train.refine_phase2_steps, usize);
        set!("val_cadence", cfg.train.val_cadence, usize);
        set!("checkpoint_cadence", cfg.train.checkpoint_cadence, usize);
        let mut ssim = SsimConfig::default();
        set!("ssim_patch", ssim.patch_size, usize);
        set!("ssim_c1", ssim.c1, f64);
        set!("ssim_c2", ssim.c2, f64);
        if let Some(window) = get("ssim_window") {
            ssim.window = match window.as_str() {
                "uniform" => WindowKind::Uniform,
                "gaussian" => {
                    let mut sigma = 1.5;
                    set!("ssim_sigma", sigma, f64);
                    WindowKind::Gaussian { sigma }
                }
                other => bail!("config key `ssim_window` must be uniform|gaussian, got `{other}`"),
            };
        }
        ssim.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        cfg.train.ssim = ssim;
        set!("adv_weight", cfg.train.adv_weight, f64);
        set!("removal_blocks", cfg.train.removal_blocks, usize);
        set!(
            "removal_layers_per_block",
            cfg.train.removal_layers_per_block,
            usize
        );
        set!("removal_filters", cfg.train.removal_filters, usize);
        set!("generator_layers", cfg.train.generator_layers, usize);
        set!("generator_filters", cfg.train.generator_filters, usize);
        set!("generator_skips", cfg.train.generator_skips, usize);
        set!(
            "phase1_early_stop_window",
            cfg.train.phase1_early_stop_window,
            usize
        );
        set!("phase1_early_stop_rel", cfg.train.phase1_early_stop_rel, f64);
        if let Some(v) = get("eval_ssim") {
            match v.as_str() {
                "internal" | "classical" => cfg.eval_ssim = v.clone(),
                other => bail!("config key `eval_ssim` must be internal|classical, got `{other}`"),
            }
        }
        if let Some(v) = get("rgbd_list") {
            cfg.rgbd_list = Some(v.clone());
        }
        Ok(cfg)
    }
}
