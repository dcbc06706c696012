//! Optional RGB-D ingestion: real image/depth pairs in place of procedural
//! scenes.

use std::path::Path;

use anyhow::{bail, Context, Result};

use dehaze_core::haze::Scene;

use crate::image_io;

/// Loads an RGB image and its 16-bit grayscale depth map (PNG or PGM) as a
/// Scene. Depth is normalized linearly so its maximum value maps to 1.0.
pub fn load_rgbd(image_path: &Path, depth_path: &Path) -> Result<Scene> {
    let clear = image_io::load_rgb(image_path)?;
    let (depth, bits) = image_io::load_gray(depth_path)?;
    if bits != 16 {
        bail!(
            "depth file {} must be 16-bit grayscale (PNG or PGM), got {bits}-bit",
            depth_path.display()
        );
    }
    if depth.height() != clear.height() || depth.width() != clear.width() {
        bail!(
            "depth {}x{} does not match image {}x{}",
            depth.width(),
            depth.height(),
            clear.width(),
            clear.height()
        );
    }
    let max = depth.max_value();
    let depth = if max > 0.0 {
        depth.map(|v| v / max)
    } else {
        depth
    };
    Ok(Scene { clear, depth })
}

/// Reads a list file of `image_path depth_path` lines (paths relative to the
/// list file's directory) into scenes.
pub fn load_rgbd_list(list_path: &Path) -> Result<Vec<Scene>> {
    let text = std::fs::read_to_string(list_path)
        .with_context(|| format!("reading RGB-D list {}", list_path.display()))?;
    let base = list_path.parent().unwrap_or(Path::new("."));
    let mut scenes = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((img, depth)) = line.split_once(char::is_whitespace) else {
            bail!(
                "RGB-D list line {}: expected `image_path depth_path`, got `{raw}`",
                lineno + 1
            );
        };
        scenes.push(load_rgbd(&base.join(img.trim()), &base.join(depth.trim()))?);
    }
    if scenes.is_empty() {
        bail!("RGB-D list {} contains no scenes", list_path.display());
    }
    Ok(scenes)
}
