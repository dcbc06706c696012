//! Haze formation physics, procedural RGB-D scenes, and paired-dataset
//! synthesis.
//!
//! A hazy observation I relates to the clear scene J through
//! I = J·t + A·(1 − t), with transmission t = exp(−β·d) under homogeneous
//! haze. The atmospheric light A is a single scalar per sample, applied
//! identically to all channels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sampling range for the global atmospheric light A.
pub const ATMOS_LIGHT_RANGE: (f64, f64) = (0.7, 1.0);
/// Sampling range for the attenuation coefficient beta.
pub const BETA_RANGE: (f64, f64) = (0.6, 1.6);
/// Transmission floor used only by the analytic inverse, never by training
/// targets.
pub const T_MIN: f64 = 0.05;

/// Global atmospheric light and attenuation coefficient for one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HazeParams {
    pub atmos_light: f64,
    pub beta: f64,
}

/// A clear image with its depth map: (1,3,H,W) in [0,1] plus (1,1,H,W)
/// non-negative depth in scene units.
#[derive(Clone, Debug)]
pub struct Scene {
    pub clear: Tensor,
    pub depth: Tensor,
}

/// One supervised example: hazy input, clear target, ground-truth
/// transmission, and the parameters that produced it.
#[derive(Clone, Debug)]
pub struct Sample {
    pub hazy: Tensor,
    pub clear: Tensor,
    pub transmission: Tensor,
    pub params: HazeParams,
}

/// t(x) = exp(−beta · d(x)), elementwise. Depth must be non-negative.
pub fn transmission_from_depth(depth: &Tensor, beta: f64) -> Result<Tensor> {
    if beta < 0.0 {
        return Err(Error::InvalidValue {
            context: "transmission_from_depth",
            detail: format!("beta must be non-negative, got {beta}"),
        });
    }
    if depth.min_value() < 0.0 {
        return Err(Error::InvalidValue {
            context: "transmission_from_depth",
            detail: format!("negative depth {}", depth.min_value()),
        });
    }
    Ok(depth.map(|d| (-beta * d).exp()))
}

/// I = J·t + A·(1 − t). A single-channel transmission broadcasts across J's
/// channels. Requires t in (0, 1] and A in (0, 1].
pub fn synthesize_hazy(clear: &Tensor, transmission: &Tensor, atmos_light: f64) -> Result<Tensor> {
    if !(0.0 < atmos_light && atmos_light <= 1.0) {
        return Err(Error::InvalidValue {
            context: "synthesize_hazy",
            detail: format!("atmospheric light must be in (0, 1], got {atmos_light}"),
        });
    }
    if transmission.min_value() <= 0.0 || transmission.max_value() > 1.0 {
        return Err(Error::InvalidValue {
            context: "synthesize_hazy",
            detail: format!(
                "transmission must be in (0, 1], got range [{}, {}]",
                transmission.min_value(),
                transmission.max_value()
            ),
        });
    }
    let t = broadcast_like(transmission, clear)?;
    clear.zip_map(&t, |j, tv| j * tv + atmos_light * (1.0 - tv))
}

/// Exact inverse of the haze model: J = (I − A·(1 − t)) / max(t, T_MIN),
/// clipped to [0, 1]. Used as a round-trip oracle and as the oracle
/// baseline; the learned pipeline never calls it.
pub fn analytic_dehaze(hazy: &Tensor, transmission: &Tensor, atmos_light: f64) -> Result<Tensor> {
    let t = broadcast_like(transmission, hazy)?;
    Ok(hazy
        .zip_map(&t, |i, tv| {
            (i - atmos_light * (1.0 - tv)) / tv.max(T_MIN)
        })?
        .clamped(0.0, 1.0))
}

fn broadcast_like(t: &Tensor, reference: &Tensor) -> Result<Tensor> {
    if t.shape() == reference.shape() {
        Ok(t.clone())
    } else if t.channels() == 1
        && t.batch() == reference.batch()
        && t.height() == reference.height()
        && t.width() == reference.width()
    {
        t.broadcast_channel(reference.channels())
    } else {
        Err(Error::ShapeMismatch {
            context: "transmission broadcast",
            expected: format!("{:?} or single-channel", reference.shape()),
            got: format!("{:?}", t.shape()),
        })
    }
}

/// A ~ Uniform[0.7, 1.0], beta ~ Uniform[0.6, 1.6].
pub fn sample_haze_params(rng: &mut ChaCha8Rng) -> HazeParams {
    HazeParams {
        atmos_light: rng.random_range(ATMOS_LIGHT_RANGE.0..=ATMOS_LIGHT_RANGE.1),
        beta: rng.random_range(BETA_RANGE.0..=BETA_RANGE.1),
    }
}

/// Procedural RGB-D scene: a color-gradient background under a global depth
/// ramp, overlaid by fronto-parallel colored rectangles (some striped for
/// texture), painted far-to-near. Depth is normalized so max(d) = 1.
pub fn generate_scene(rng: &mut ChaCha8Rng, height: usize, width: usize) -> Scene {
    let mut clear = Tensor::zeros([1, 3, height, width]);
    let mut depth = Tensor::zeros([1, 1, height, width]);

    // background gradient between two colors along a random direction
    let c0: [f64; 3] = [
        rng.random_range(0.05..0.95),
        rng.random_range(0.05..0.95),
        rng.random_range(0.05..0.95),
    ];
    let c1: [f64; 3] = [
        rng.random_range(0.05..0.95),
        rng.random_range(0.05..0.95),
        rng.random_range(0.05..0.95),
    ];
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (dir_y, dir_x) = (angle.sin(), angle.cos());
    // depth ramp from a random near value up to exactly 1.0
    let depth_near = rng.random_range(0.0..0.3);
    let ramp_vertical = rng.random_range(0.0..1.0) < 0.5;

    let diag = ((height * height + width * width) as f64).sqrt();
    for y in 0..height {
        for x in 0..width {
            let proj = (y as f64 * dir_y + x as f64 * dir_x) / diag; // in [-1, 1]
            let g = (proj + 1.0) / 2.0;
            for ch in 0..3 {
                clear.set(0, ch, y, x, c0[ch] + (c1[ch] - c0[ch]) * g);
            }
            let r = if ramp_vertical {
                y as f64 / (height - 1).max(1) as f64
            } else {
                x as f64 / (width - 1).max(1) as f64
            };
            depth.set(0, 0, y, x, depth_near + (1.0 - depth_near) * r);
        }
    }

    // rectangles with constant depth planes, far first so near ones overdraw
    let n_rects = rng.random_range(4..=8);
    let mut rects = Vec::with_capacity(n_rects);
    for _ in 0..n_rects {
        let rw = rng.random_range(width / 8..=width / 2).max(2);
        let rh = rng.random_range(height / 8..=height / 2).max(2);
        let x0 = rng.random_range(0..width.saturating_sub(rw).max(1));
        let y0 = rng.random_range(0..height.saturating_sub(rh).max(1));
        let color: [f64; 3] = [
            rng.random_range(0.05..0.95),
            rng.random_range(0.05..0.95),
            rng.random_range(0.05..0.95),
        ];
        let d = rng.random_range(0.05..0.95);
        let striped = rng.random_range(0.0..1.0) < 0.5;
        let period = rng.random_range(2..=4usize);
        rects.push((d, x0, y0, rw, rh, color, striped, period));
    }
    rects.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    for (d, x0, y0, rw, rh, color, striped, period) in rects {
        for y in y0..(y0 + rh).min(height) {
            for x in x0..(x0 + rw).min(width) {
                let shade = if striped && (y / period) % 2 == 0 { 0.7 } else { 1.0 };
                for ch in 0..3 {
                    clear.set(0, ch, y, x, (color[ch] * shade).clamp(0.0, 1.0));
                }
                depth.set(0, 0, y, x, d);
            }
        }
    }

    // normalize so the farthest point sits at depth 1 exactly
    let max_d = depth.max_value();
    if max_d > 0.0 {
        depth = depth.map(|d| d / max_d);
    }
    Scene { clear, depth }
}

/// Haze draws for one existing scene: `samples_per_scene` independent
/// parameter samples from the given RNG, each producing one Sample.
pub fn scene_samples(scene: &Scene, samples_per_scene: usize, rng: &mut ChaCha8Rng) -> Vec<Sample> {
    (0..samples_per_scene)
        .map(|_| {
            let params = sample_haze_params(rng);
            let transmission =
                transmission_from_depth(&scene.depth, params.beta).expect("depth >= 0");
            let hazy = synthesize_hazy(&scene.clear, &transmission, params.atmos_light)
                .expect("valid scene");
            Sample {
                hazy,
                clear: scene.clear.clone(),
                transmission,
                params,
            }
        })
        .collect()
}

/// Procedural scene number `scene_index` with its haze draws. The RNG is
/// ChaCha seeded with `seed + scene_index`, so any scene can be produced
/// independently and in any order.
pub fn synth_scene_samples(
    seed: u64,
    scene_index: u64,
    samples_per_scene: usize,
    height: usize,
    width: usize,
) -> (Scene, Vec<Sample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(scene_index));
    let scene = generate_scene(&mut rng, height, width);
    let samples = scene_samples(&scene, samples_per_scene, &mut rng);
    (scene, samples)
}

/// Builds train/validation splits of synthesized samples. Scene `i` derives
/// its RNG from `seed + i` (validation scenes continue the numbering after
/// the training scenes), so generation is a pure function of the seed and
/// parallelizable per scene.
pub fn build_dataset(
    seed: u64,
    train_scenes: usize,
    val_scenes: usize,
    samples_per_scene: usize,
    height: usize,
    width: usize,
) -> (Vec<Sample>, Vec<Sample>) {
    let synth = |scene_index: u64| -> Vec<Sample> {
        synth_scene_samples(seed, scene_index, samples_per_scene, height, width).1
    };
    let train = (0..train_scenes as u64).flat_map(synth).collect();
    let val = (train_scenes as u64..(train_scenes + val_scenes) as u64)
        .flat_map(synth)
        .collect();
    (train, val)
}

/// Builds splits from externally provided scenes (RGB-D files) instead of
/// procedural ones; haze parameters still follow the per-scene seed scheme.
pub fn build_dataset_from_scenes(
    seed: u64,
    train: &[Scene],
    val: &[Scene],
    samples_per_scene: usize,
) -> (Vec<Sample>, Vec<Sample>) {
    let draw = |offset: usize, scenes: &[Scene]| -> Vec<Sample> {
        scenes
            .iter()
            .enumerate()
            .flat_map(|(i, scene)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add((offset + i) as u64));
                scene_samples(scene, samples_per_scene, &mut rng)
            })
            .collect()
    };
    (draw(0, train), draw(train.len(), val))
}
