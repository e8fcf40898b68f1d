//! Training-time augmentation: horizontal flip, +/-90 degree rotation and
//! grid patch masking ("hide and seek").
//!
//! Augmentation only ever touches pixels. Image-level presence labels are
//! invariant under all three transforms and are never passed in here.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Result};
use crate::raster::Image;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSpec {
    pub flip_prob: f64,
    pub rotate_prob: f64,
    pub masking: bool,
    pub mask_patch_size: usize,
    pub mask_prob_per_patch: f64,
    /// Per-channel mean pixel of the training split.
    pub fill_value: Vec<f32>,
}

impl AugmentSpec {
    pub fn new(fill_value: Vec<f32>) -> Self {
        Self {
            flip_prob: 0.5,
            rotate_prob: 0.5,
            masking: true,
            mask_patch_size: 30,
            mask_prob_per_patch: 0.5,
            fill_value,
        }
    }

    /// No-op augmentation.
    pub fn none(channels: usize) -> Self {
        Self {
            flip_prob: 0.0,
            rotate_prob: 0.0,
            masking: false,
            ..Self::new(vec![0.0; channels])
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("flip_prob", self.flip_prob),
            ("rotate_prob", self.rotate_prob),
            ("mask_prob_per_patch", self.mask_prob_per_patch),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(config_err(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.mask_patch_size == 0 {
            return Err(config_err("mask_patch_size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rotation {
    /// Counter-clockwise.
    Plus90,
    /// Clockwise.
    Minus90,
}

pub fn hflip(image: &Image) -> Image {
    let mut out = image.clone();
    let w = image.width;
    for row in out.data.chunks_mut(w) {
        row.reverse();
    }
    out
}

/// Exact quarter turn; an `h x w` image becomes `w x h`.
pub fn rot90(image: &Image, direction: Rotation) -> Image {
    let (h, w) = (image.height, image.width);
    let mut out = Image::filled(image.channels, w, h, 0.0);
    for c in 0..image.channels {
        for r in 0..w {
            for col in 0..h {
                let v = match direction {
                    Rotation::Plus90 => image.get(c, col, w - 1 - r),
                    Rotation::Minus90 => image.get(c, h - 1 - col, r),
                };
                out.set(c, r, col, v);
            }
        }
    }
    out
}

/// Splits the image into a `patch x patch` grid (edge cells may be smaller)
/// and replaces each cell with `fill_value` with probability
/// `mask_prob_per_patch`. One draw per cell, row-major.
pub fn mask_patches(image: &Image, spec: &AugmentSpec, rng: &mut impl Rng) -> Result<Image> {
    if spec.fill_value.len() != image.channels {
        return Err(config_err(format!(
            "mask fill has {} channels, image has {}",
            spec.fill_value.len(),
            image.channels
        )));
    }
    let mut out = image.clone();
    let p = spec.mask_patch_size;
    for y0 in (0..image.height).step_by(p) {
        for x0 in (0..image.width).step_by(p) {
            if rng.gen::<f64>() >= spec.mask_prob_per_patch {
                continue;
            }
            for (c, &fill) in spec.fill_value.iter().enumerate() {
                for y in y0..(y0 + p).min(image.height) {
                    for x in x0..(x0 + p).min(image.width) {
                        out.set(c, y, x, fill);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Flip, then rotate, then mask, each drawn from `rng`.
pub fn augment_image(image: &Image, spec: &AugmentSpec, rng: &mut impl Rng) -> Result<Image> {
    let flip = rng.gen::<f64>() < spec.flip_prob;
    let rotate = rng.gen::<f64>() < spec.rotate_prob;
    let direction = if rng.gen::<bool>() { Rotation::Plus90 } else { Rotation::Minus90 };
    let mut out = if flip { hflip(image) } else { image.clone() };
    if rotate {
        out = rot90(&out, direction);
    }
    if spec.masking {
        out = mask_patches(&out, spec, rng)?;
    }
    Ok(out)
}

/// Random stream for one image of one batch of one epoch.
pub fn image_stream(seed: u64, epoch: usize, batch: usize, image: usize) -> ChaCha8Rng {
    seed::stream(&[seed, 0xA06, epoch as u64, batch as u64, image as u64])
}

/// Augments every image independently with its own stream.
pub fn augment_batch(images: &[Image], spec: &AugmentSpec, seed: u64, epoch: usize, batch: usize) -> Result<Vec<Image>> {
    spec.validate()?;
    images
        .iter()
        .enumerate()
        .map(|(i, img)| augment_image(img, spec, &mut image_stream(seed, epoch, batch, i)))
        .collect()
}
