//! `synth`: manufacture the paired hazy/clear dataset and its manifest.

use std::path::Path;

use anyhow::{Context, Result};

use dehaze_core::haze::{
    scene_samples, synth_scene_samples, Sample, Scene, ATMOS_LIGHT_RANGE, BETA_RANGE,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::commands::{ensure_dir, progress};
use crate::config::FileConfig;
use crate::image_io;
use crate::manifest::{Manifest, ManifestSample};
use crate::rgbd::load_rgbd_list;

pub fn cmd_synth(config_path: &Path, out: &Path) -> Result<()> {
    let cfg = FileConfig::load(config_path)?;
    ensure_dir(out)?;
    ensure_dir(&out.join("train"))?;
    ensure_dir(&out.join("val"))?;

    let mut manifest = Manifest {
        seed: cfg.train.seed,
        width: cfg.train.width,
        height: cfg.train.height,
        train_scenes: cfg.train_scenes,
        val_scenes: cfg.val_scenes,
        samples_per_scene: cfg.samples_per_scene,
        atmos_light_range: [ATMOS_LIGHT_RANGE.0, ATMOS_LIGHT_RANGE.1],
        beta_range: [BETA_RANGE.0, BETA_RANGE.1],
        config: cfg.entries.clone(),
        samples: Vec::new(),
    };

    if let Some(list) = &cfg.rgbd_list {
        synth_from_rgbd(&cfg, list, out, &mut manifest)?;
    } else {
        synth_procedural(&cfg, out, &mut manifest)?;
    }

    manifest.save(&out.join("manifest.json"))?;
    manifest.validate(out)?;
    progress!(
        "synth: wrote {} samples under {}",
        manifest.samples.len(),
        out.display()
    );
    Ok(())
}

fn synth_procedural(cfg: &FileConfig, out: &Path, manifest: &mut Manifest) -> Result<()> {
    let total_scenes = cfg.train_scenes + cfg.val_scenes;
    for scene_index in 0..total_scenes {
        let split = if scene_index < cfg.train_scenes {
            "train"
        } else {
            "val"
        };
        let (scene, samples) = synth_scene_samples(
            cfg.train.seed,
            scene_index as u64,
            cfg.samples_per_scene,
            cfg.train.height,
            cfg.train.width,
        );
        write_scene(
            out,
            split,
            scene_index as u32,
            cfg.train.seed,
            &scene,
            &samples,
            manifest,
        )?;
    }
    Ok(())
}

fn synth_from_rgbd(
    cfg: &FileConfig,
    list: &str,
    out: &Path,
    manifest: &mut Manifest,
) -> Result<()> {
    let scenes = load_rgbd_list(Path::new(list))?;
    // the last fifth of the list (at least one scene) becomes validation
    let val_len = (scenes.len() / 5).max(1).min(scenes.len());
    let train_len = scenes.len() - val_len;
    manifest.train_scenes = train_len;
    manifest.val_scenes = val_len;
    for (scene_index, scene) in scenes.iter().enumerate() {
        let split = if scene_index < train_len { "train" } else { "val" };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed.wrapping_add(scene_index as u64));
        let samples = scene_samples(scene, cfg.samples_per_scene, &mut rng);
        write_scene(
            out,
            split,
            scene_index as u32,
            cfg.train.seed,
            scene,
            &samples,
            manifest,
        )?;
    }
    Ok(())
}

fn write_scene(
    out: &Path,
    split: &str,
    scene_index: u32,
    seed: u64,
    scene: &Scene,
    samples: &[Sample],
    manifest: &mut Manifest,
) -> Result<()> {
    let clear_rel = format!("{split}/scene{scene_index:04}_clear.png");
    let depth_rel = format!("{split}/scene{scene_index:04}_depth.png");
    image_io::save_rgb(&scene.clear, &out.join(&clear_rel))
        .with_context(|| format!("scene {scene_index}"))?;
    image_io::save_gray16(&scene.depth, &out.join(&depth_rel))?;
    for (sample_index, sample) in samples.iter().enumerate() {
        let hazy_rel = format!("{split}/scene{scene_index:04}_s{sample_index:02}_hazy.png");
        let t_rel = format!("{split}/scene{scene_index:04}_s{sample_index:02}_t.png");
        image_io::save_rgb(&sample.hazy, &out.join(&hazy_rel))?;
        image_io::save_gray16(&sample.transmission, &out.join(&t_rel))?;
        manifest.samples.push(ManifestSample {
            scene: scene_index,
            sample: sample_index as u32,
            split: split.to_string(),
            clear: clear_rel.clone(),
            hazy: hazy_rel,
            transmission: t_rel,
            depth: depth_rel.clone(),
            atmos_light: sample.params.atmos_light,
            beta: sample.params.beta,
            seed_lineage: format!("{seed}/{scene_index}/{sample_index}"),
        });
    }
    Ok(())
}
