//! Lossless image file I/O (PNG and binary PPM/PGM) and tensor conversion.
//!
//! 8-bit round trips are exact: u8 -> [0,1] f64 -> u8 reproduces every
//! value. Dataset transmission and depth maps are stored as 16-bit
//! grayscale so training targets keep their precision.

use std::path::Path;

use anyhow::{bail, Context, Result};
use image::{DynamicImage, GrayImage, ImageBuffer, Luma, RgbImage};

use dehaze_core::Tensor;

pub fn rgb8_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    let mut t = Tensor::zeros([1, 3, h as usize, w as usize]);
    for (x, y, pixel) in img.enumerate_pixels() {
        for c in 0..3 {
            t.set(0, c, y as usize, x as usize, pixel.0[c] as f64 / 255.0);
        }
    }
    t
}

/// Clamps to [0,1] and rounds to 8 bits. Requires a single-image batch.
pub fn tensor_to_rgb8(t: &Tensor) -> Result<RgbImage> {
    if t.batch() != 1 || t.channels() != 3 {
        bail!(
            "expected a (1, 3, H, W) tensor for RGB output, got {:?}",
            t.shape()
        );
    }
    let (h, w) = (t.height(), t.width());
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                to_u8(t.at(0, 0, y, x)),
                to_u8(t.at(0, 1, y, x)),
                to_u8(t.at(0, 2, y, x)),
            ];
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    Ok(img)
}

pub fn tensor_to_gray8(t: &Tensor) -> Result<GrayImage> {
    if t.batch() != 1 || t.channels() != 1 {
        bail!(
            "expected a (1, 1, H, W) tensor for grayscale output, got {:?}",
            t.shape()
        );
    }
    let (h, w) = (t.height(), t.width());
    let mut img = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            img.put_pixel(x as u32, y as u32, Luma([to_u8(t.at(0, 0, y, x))]));
        }
    }
    Ok(img)
}

pub fn tensor_to_gray16(t: &Tensor) -> Result<ImageBuffer<Luma<u16>, Vec<u16>>> {
    if t.batch() != 1 || t.channels() != 1 {
        bail!(
            "expected a (1, 1, H, W) tensor for grayscale output, got {:?}",
            t.shape()
        );
    }
    let (h, w) = (t.height(), t.width());
    let mut img = ImageBuffer::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = (t.at(0, 0, y, x).clamp(0.0, 1.0) * 65535.0).round() as u16;
            img.put_pixel(x as u32, y as u32, Luma([v]));
        }
    }
    Ok(img)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads any supported image as an RGB tensor in [0, 1].
pub fn load_rgb(path: &Path) -> Result<Tensor> {
    let img = image::open(path).with_context(|| format!("reading image {}", path.display()))?;
    Ok(rgb8_to_tensor(&img.to_rgb8()))
}

/// Reads a grayscale image, reporting its bit depth (8 or 16) and values
/// normalized by the type maximum.
pub fn load_gray(path: &Path) -> Result<(Tensor, u32)> {
    let img = image::open(path).with_context(|| format!("reading image {}", path.display()))?;
    match img {
        DynamicImage::ImageLuma16(g) => {
            let (w, h) = g.dimensions();
            let mut t = Tensor::zeros([1, 1, h as usize, w as usize]);
            for (x, y, pixel) in g.enumerate_pixels() {
                t.set(0, 0, y as usize, x as usize, pixel.0[0] as f64 / 65535.0);
            }
            Ok((t, 16))
        }
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            let mut t = Tensor::zeros([1, 1, h as usize, w as usize]);
            for (x, y, pixel) in g.enumerate_pixels() {
                t.set(0, 0, y as usize, x as usize, pixel.0[0] as f64 / 255.0);
            }
            Ok((t, 8))
        }
        other => {
            let g = other.to_luma16();
            let (w, h) = g.dimensions();
            let mut t = Tensor::zeros([1, 1, h as usize, w as usize]);
            for (x, y, pixel) in g.enumerate_pixels() {
                t.set(0, 0, y as usize, x as usize, pixel.0[0] as f64 / 65535.0);
            }
            Ok((t, 16))
        }
    }
}

pub fn save_rgb(t: &Tensor, path: &Path) -> Result<()> {
    let img = tensor_to_rgb8(t)?;
    img.save(path)
        .with_context(|| format!("writing image {}", path.display()))?;
    Ok(())
}

pub fn save_gray8(t: &Tensor, path: &Path) -> Result<()> {
    let img = tensor_to_gray8(t)?;
    img.save(path)
        .with_context(|| format!("writing image {}", path.display()))?;
    Ok(())
}

pub fn save_gray16(t: &Tensor, path: &Path) -> Result<()> {
    let img = tensor_to_gray16(t)?;
    img.save(path)
        .with_context(|| format!("writing image {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rgb8_png_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..3 * 6 * 8)
            .map(|_| rng.random_range(0..=255u8) as f64 / 255.0)
            .collect();
        let t = Tensor::from_vec([1, 3, 6, 8], data).unwrap();
        let path = dir.path().join("img.png");
        save_rgb(&t, &path).unwrap();
        let back = load_rgb(&path).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rgb8_ppm_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..3 * 5 * 7)
            .map(|_| rng.random_range(0..=255u8) as f64 / 255.0)
            .collect();
        let t = Tensor::from_vec([1, 3, 5, 7], data).unwrap();
        let path = dir.path().join("img.ppm");
        save_rgb(&t, &path).unwrap();
        let back = load_rgb(&path).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn gray16_png_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..4 * 5)
            .map(|_| rng.random_range(0..=65535u16) as f64 / 65535.0)
            .collect();
        let t = Tensor::from_vec([1, 1, 4, 5], data).unwrap();
        let path = dir.path().join("depth.png");
        save_gray16(&t, &path).unwrap();
        let (back, bits) = load_gray(&path).unwrap();
        assert_eq!(bits, 16);
        assert_eq!(back, t);
    }

    #[test]
    fn gray8_files_report_their_bit_depth() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::filled([1, 1, 4, 4], 0.5);
        let path = dir.path().join("gray.png");
        save_gray8(&t, &path).unwrap();
        let (_, bits) = load_gray(&path).unwrap();
        assert_eq!(bits, 8);
    }
}
