//! Dataset manifest: per-sample file records plus the config snapshot that
//! produced them.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use dehaze_core::haze::{HazeParams, Sample, ATMOS_LIGHT_RANGE, BETA_RANGE};

use crate::image_io;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestSample {
    pub scene: u32,
    pub sample: u32,
    pub split: String,
    pub clear: String,
    pub hazy: String,
    pub transmission: String,
    pub depth: String,
    pub atmos_light: f64,
    pub beta: f64,
    pub seed_lineage: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub samples_per_scene: usize,
    pub atmos_light_range: [f64; 2],
    pub beta_range: [f64; 2],
    pub config: BTreeMap<String, String>,
    pub samples: Vec<ManifestSample>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)
            .with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks that every referenced file exists with the recorded dimensions
    /// and that haze parameters lie inside the sampling ranges.
    pub fn validate(&self, root: &Path) -> Result<()> {
        for s in &self.samples {
            for (which, rel) in [
                ("clear", &s.clear),
                ("hazy", &s.hazy),
                ("transmission", &s.transmission),
                ("depth", &s.depth),
            ] {
                let path = root.join(rel);
                if !path.exists() {
                    bail!(
                        "manifest references missing {which} file {}",
                        path.display()
                    );
                }
                let (w, h) = image::image_dimensions(&path)
                    .with_context(|| format!("probing {}", path.display()))?;
                if (w as usize, h as usize) != (self.width, self.height) {
                    bail!(
                        "{} is {}x{}, manifest says {}x{}",
                        path.display(),
                        w,
                        h,
                        self.width,
                        self.height
                    );
                }
            }
            if !(ATMOS_LIGHT_RANGE.0..=ATMOS_LIGHT_RANGE.1).contains(&s.atmos_light) {
                bail!(
                    "sample {}/{}: atmospheric light {} outside [{}, {}]",
                    s.scene,
                    s.sample,
                    s.atmos_light,
                    ATMOS_LIGHT_RANGE.0,
                    ATMOS_LIGHT_RANGE.1
                );
            }
            if !(BETA_RANGE.0..=BETA_RANGE.1).contains(&s.beta) {
                bail!(
                    "sample {}/{}: beta {} outside [{}, {}]",
                    s.scene,
                    s.sample,
                    s.beta,
                    BETA_RANGE.0,
                    BETA_RANGE.1
                );
            }
        }
        Ok(())
    }

    /// Loads one split ("train" or "val") back into memory.
    pub fn load_samples(&self, root: &Path, split: &str) -> Result<Vec<Sample>> {
        let mut out = Vec::new();
        for s in self.samples.iter().filter(|s| s.split == split) {
            let hazy = image_io::load_rgb(&root.join(&s.hazy))?;
            let clear = image_io::load_rgb(&root.join(&s.clear))?;
            let (transmission, _) = image_io::load_gray(&root.join(&s.transmission))?;
            out.push(Sample {
                hazy,
                clear,
                transmission,
                params: HazeParams {
                    atmos_light: s.atmos_light,
                    beta: s.beta,
                },
            });
        }
        Ok(out)
    }
}
