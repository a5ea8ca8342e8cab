//! Seeded photometric and geometric augmentation of synthesized samples:
//! horizontal flip, random resized crop, color jitter and Gaussian blur,
//! applied in that order.

use image::imageops::{self, FilterType};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::compose::{AugmentedSample, PatchOrigin};
use super::grid::PatchGrid;
use crate::seed;
use crate::tensor::ImageTensor;

pub const FLIP_PROBABILITY: f64 = 0.5;
pub const CROP_SCALE: (f64, f64) = (0.8, 1.0);
pub const JITTER_RANGE: (f64, f64) = (0.8, 1.2);
pub const BLUR_SIGMA: (f64, f64) = (0.1, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AugmentOp {
    HorizontalFlip,
    ResizedCrop {
        scale: f64,
        top: usize,
        left: usize,
        side: usize,
    },
    ColorJitter {
        brightness: f64,
        contrast: f64,
        saturation: f64,
    },
    GaussianBlur {
        sigma: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub flip: bool,
    /// Fraction of the image area kept by the crop.
    pub crop_scale: f64,
    /// Crop offset as fractions of the free margin.
    pub crop_offset: (f64, f64),
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Blur is skipped below the lower end of the sigma range.
    pub blur_sigma: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        flip: false,
        crop_scale: 1.0,
        crop_offset: (0.0, 0.0),
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        blur_sigma: 0.0,
    };

    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        Self {
            flip: rng.gen_bool(FLIP_PROBABILITY),
            crop_scale: rng.gen_range(CROP_SCALE.0..=CROP_SCALE.1),
            crop_offset: (rng.gen(), rng.gen()),
            brightness: rng.gen_range(JITTER_RANGE.0..=JITTER_RANGE.1),
            contrast: rng.gen_range(JITTER_RANGE.0..=JITTER_RANGE.1),
            saturation: rng.gen_range(JITTER_RANGE.0..=JITTER_RANGE.1),
            blur_sigma: rng.gen_range(BLUR_SIGMA.0..=BLUR_SIGMA.1),
        }
    }
}

fn flip_horizontal(image: &mut ImageTensor) {
    let w = image.width;
    for row in image.pixels.chunks_exact_mut(w * 3) {
        for x in 0..w / 2 {
            for c in 0..3 {
                row.swap(x * 3 + c, (w - 1 - x) * 3 + c);
            }
        }
    }
}

fn luma(px: &[f32]) -> f32 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

fn color_jitter(image: &mut ImageTensor, brightness: f64, contrast: f64, saturation: f64) {
    let mut values: Vec<f32> = image
        .pixels
        .iter()
        .map(|&v| (f32::from(v) * brightness as f32).clamp(0.0, 255.0))
        .collect();
    let n = (values.len() / 3).max(1) as f32;
    let mean = values.chunks_exact(3).map(luma).sum::<f32>() / n;
    for v in values.iter_mut() {
        *v = (mean + contrast as f32 * (*v - mean)).clamp(0.0, 255.0);
    }
    for px in values.chunks_exact_mut(3) {
        let gray = luma(px);
        for v in px.iter_mut() {
            *v = (gray + saturation as f32 * (*v - gray)).clamp(0.0, 255.0);
        }
    }
    for (dst, v) in image.pixels.iter_mut().zip(values) {
        *dst = v.round() as u8;
    }
}

/// Apply explicit parameters. Factors of exactly 1.0, a full-size crop and
/// a disabled blur leave the corresponding step out.
pub fn apply_augment(sample: &AugmentedSample, params: &AugmentParams, grid: &PatchGrid) -> AugmentedSample {
    let mut out = sample.clone();
    let size = out.image.height;

    if params.flip {
        flip_horizontal(&mut out.image);
        let mirrored: Vec<Vec<PatchOrigin>> = (0..grid.len())
            .map(|p| sample.patch_sources[grid.mirrored(p)].clone())
            .collect();
        out.patch_sources = mirrored;
        out.post_augment_ops.push(AugmentOp::HorizontalFlip);
    }

    let side = ((params.crop_scale.sqrt() * size as f64).round() as usize).clamp(1, size);
    if side < size {
        let margin = size - side;
        let top = ((params.crop_offset.0 * margin as f64).floor() as usize).min(margin);
        let left = ((params.crop_offset.1 * margin as f64).floor() as usize).min(margin);
        let rgb = out.image.to_rgb_image();
        let cropped = imageops::crop_imm(&rgb, left as u32, top as u32, side as u32, side as u32).to_image();
        let resized = imageops::resize(&cropped, size as u32, size as u32, FilterType::Triangle);
        out.image.pixels = resized.into_raw();
        out.post_augment_ops.push(AugmentOp::ResizedCrop {
            scale: params.crop_scale,
            top,
            left,
            side,
        });
    }

    if params.brightness != 1.0 || params.contrast != 1.0 || params.saturation != 1.0 {
        color_jitter(&mut out.image, params.brightness, params.contrast, params.saturation);
        out.post_augment_ops.push(AugmentOp::ColorJitter {
            brightness: params.brightness,
            contrast: params.contrast,
            saturation: params.saturation,
        });
    }

    if params.blur_sigma >= BLUR_SIGMA.0 {
        let blurred = imageops::blur(&out.image.to_rgb_image(), params.blur_sigma as f32);
        out.image.pixels = blurred.into_raw();
        out.post_augment_ops.push(AugmentOp::GaussianBlur {
            sigma: params.blur_sigma,
        });
    }
    out
}

/// Draw parameters from `seed` and apply them. Deterministic in `seed`; the
/// label and image size never change.
pub fn standard_augment(sample: &AugmentedSample, seed: u64, grid: &PatchGrid) -> AugmentedSample {
    let params = AugmentParams::sample(&mut seed::rng(seed));
    apply_augment(sample, &params, grid)
}
