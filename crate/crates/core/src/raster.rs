//! Planar float images and conversion to network input.

use crate::error::{config_err, Result};
use crate::tensor::Tensor4;

/// Channel-planar image with values in 8-bit pixel units (0..=255).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(config_err(format!(
                "image {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0; 3 * h * w];
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                data[(c * h + y as usize) * w + x as usize] = p[c] as f32;
            }
        }
        Self { channels: 3, height: h, width: w, data }
    }

    /// Rounds and clamps to 8 bits; needs 3 channels.
    pub fn to_rgb8(&self) -> Result<image::RgbImage> {
        if self.channels != 3 {
            return Err(config_err(format!("cannot encode a {}-channel image as RGB", self.channels)));
        }
        Ok(image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c| self.get(c, y as usize, x as usize).round().clamp(0.0, 255.0) as u8;
            image::Rgb([px(0), px(1), px(2)])
        }))
    }

    /// Network input: `(pixel - mean) / 255`, batch of one.
    pub fn to_tensor(&self, mean: &[f64]) -> Result<Tensor4<f32>> {
        if mean.len() != self.channels {
            return Err(config_err(format!("{} mean values for {} channels", mean.len(), self.channels)));
        }
        let plane = self.height * self.width;
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| ((v as f64 - mean[i / plane]) / 255.0) as f32)
            .collect();
        Tensor4::from_vec([1, self.channels, self.height, self.width], data)
    }
}
