//! Heatmap post-processing: upsample localization maps to the input size,
//! take one peak per class and render overlays.

use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::Dataset;
use crate::error::{config_err, Error, Result};
use crate::metrics::{evaluate, ClassPrediction, EvalReport};
use crate::model::Model;
use crate::objective::sigmoid;
use crate::raster::Image;
use crate::tensor::{bilinear_resize, spatial_extrema, Mode, Tensor4};

/// Default presence threshold on sigmoid confidence.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Raw per-class maps at input resolution, `(1, C, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpsampledMaps {
    pub maps: Tensor4<f32>,
}

impl UpsampledMaps {
    pub fn num_classes(&self) -> usize {
        self.maps.channels()
    }

    pub fn height(&self) -> usize {
        self.maps.height()
    }

    pub fn width(&self) -> usize {
        self.maps.width()
    }

    pub fn class_map(&self, class: usize) -> &[f32] {
        self.maps.plane(0, class)
    }
}

/// Upsamples `(1, C, h, w)` maps to `height x width` and reads one peak per
/// class (first maximum in row-major order) from the raw map.
pub fn peaks_from_maps(
    maps: &Tensor4<f32>,
    scores: &[f32],
    height: usize,
    width: usize,
    threshold: f64,
) -> Result<(Vec<ClassPrediction>, UpsampledMaps)> {
    if maps.batch() != 1 || maps.channels() != scores.len() {
        return Err(config_err(format!(
            "expected maps of one image with {} classes, got dims {:?}",
            scores.len(),
            maps.dims()
        )));
    }
    let up = bilinear_resize(maps, height, width)?;
    let mut preds = Vec::with_capacity(scores.len());
    for (c, &s) in scores.iter().enumerate() {
        let ext = spatial_extrema(up.plane(0, c), height, width)?;
        let confidence = sigmoid(s as f64);
        preds.push(ClassPrediction {
            confidence,
            x: ext.argmax.1 as f64,
            y: ext.argmax.0 as f64,
            present: confidence >= threshold,
        });
    }
    Ok((preds, UpsampledMaps { maps: up }))
}

pub fn predict(model: &Model, image: &Image, threshold: f64) -> Result<(Vec<ClassPrediction>, UpsampledMaps)> {
    let mut out = predict_batch(model, std::slice::from_ref(image), threshold)?;
    Ok(out.pop().expect("one image in, one prediction out"))
}

/// Eval-mode prediction for many images; same-sized neighbours share a
/// forward pass, which does not change any per-image result.
pub fn predict_batch(model: &Model, images: &[Image], threshold: f64) -> Result<Vec<(Vec<ClassPrediction>, UpsampledMaps)>> {
    const CHUNK: usize = 16;
    let mut results = Vec::with_capacity(images.len());
    let mut start = 0;
    while start < images.len() {
        let (h, w) = (images[start].height, images[start].width);
        let mut end = start + 1;
        while end < images.len() && end - start < CHUNK && images[end].height == h && images[end].width == w {
            end += 1;
        }
        let tensors = images[start..end]
            .iter()
            .map(|img| img.to_tensor(&model.mean_pixel))
            .collect::<Result<Vec<_>>>()?;
        let batch = Tensor4::concat_batch(&tensors)?;
        let (out, _) = model.net.forward(std::slice::from_ref(&batch), Mode::Eval)?;
        let maps = &out.maps[0].maps;
        for i in 0..end - start {
            results.push(peaks_from_maps(&maps.sample_tensor(i), &out.scores[i], h, w, threshold)?);
        }
        start = end;
    }
    Ok(results)
}

/// Overlay colors, cycled by class index.
pub const PALETTE: [[u8; 3]; 7] = [
    [255, 255, 0],
    [0, 255, 255],
    [255, 0, 255],
    [0, 255, 0],
    [255, 128, 0],
    [0, 128, 255],
    [255, 255, 255],
];

pub const DEFAULT_OPACITY: f64 = 0.6;

/// Blend weight of a raw map value: zero at or below 0, approaching
/// `opacity` as the sigmoid saturates.
pub fn blend_alpha(value: f64, opacity: f64) -> f64 {
    opacity * (2.0 * sigmoid(value) - 1.0).max(0.0)
}

/// Blends every class map over the image in class order and marks the peak
/// of each class predicted present with a small cross.
pub fn render_overlay(image: &Image, maps: &UpsampledMaps, predictions: &[ClassPrediction], opacity: f64) -> Result<image::RgbImage> {
    if image.channels != 3 || image.height != maps.height() || image.width != maps.width() {
        return Err(config_err(format!(
            "overlay needs an RGB image matching the {}x{} maps",
            maps.height(),
            maps.width()
        )));
    }
    if predictions.len() != maps.num_classes() {
        return Err(config_err("one prediction per class map required"));
    }
    let (h, w) = (image.height, image.width);
    let mut out = image.clone();
    for c in 0..maps.num_classes() {
        let color = PALETTE[c % PALETTE.len()];
        let map = maps.class_map(c);
        for y in 0..h {
            for x in 0..w {
                let a = blend_alpha(map[y * w + x] as f64, opacity);
                if a > 0.0 {
                    for (ch, &col) in color.iter().enumerate() {
                        let v = out.get(ch, y, x) as f64;
                        out.set(ch, y, x, ((1.0 - a) * v + a * col as f64) as f32);
                    }
                }
            }
        }
    }
    let mut rgb = out.to_rgb8()?;
    for (c, p) in predictions.iter().enumerate().filter(|(_, p)| p.present) {
        let color = image::Rgb(PALETTE[c % PALETTE.len()]);
        let (px, py) = (p.x as i64, p.y as i64);
        for d in -4i64..=4 {
            for (x, y) in [(px + d, py), (px, py + d)] {
                if (0..w as i64).contains(&x) && (0..h as i64).contains(&y) {
                    rgb.put_pixel(x as u32, y as u32, color);
                }
            }
        }
    }
    Ok(rgb)
}

/// Writes the overlay; the format follows the extension (`.png`, `.ppm`).
pub fn save_overlay(image: &Image, maps: &UpsampledMaps, predictions: &[ClassPrediction], opacity: f64, path: &Path) -> Result<()> {
    render_overlay(image, maps, predictions, opacity)?.save(path)?;
    Ok(())
}

/// Predictions for every image of a split, in split order.
pub fn predict_split(model: &Model, dataset: &Dataset, split: &str, threshold: f64) -> Result<Vec<(String, Vec<ClassPrediction>)>> {
    if dataset.class_names() != model.class_names.as_slice() {
        return Err(config_err(format!(
            "model classes {:?} differ from dataset classes {:?}",
            model.class_names,
            dataset.class_names()
        )));
    }
    let mut rows = Vec::new();
    for chunk in dataset.split(split)?.chunks(64) {
        let images = chunk.iter().map(|n| dataset.load_image(n)).collect::<Result<Vec<_>>>()?;
        for (name, (p, _)) in chunk.iter().zip(predict_batch(model, &images, threshold)?) {
            rows.push((name.clone(), p));
        }
    }
    Ok(rows)
}

/// Full metric suite on an annotated split.
pub fn evaluate_split(model: &Model, dataset: &Dataset, split: &str, tolerance: f64) -> Result<EvalReport> {
    if !dataset.has_annotations() {
        return Err(Error::Input(format!("dataset {} has no boxes; cannot evaluate localization", dataset.root().display())));
    }
    let rows = predict_split(model, dataset, split, DEFAULT_THRESHOLD)?;
    let mut labels = Vec::with_capacity(rows.len());
    let mut annotations = Vec::with_capacity(rows.len());
    let mut dims = Vec::with_capacity(rows.len());
    for (name, _) in &rows {
        labels.push(dataset.label(name).cloned().ok_or_else(|| Error::Input(format!("no label for {name}")))?);
        annotations.push(dataset.annotations(name).to_vec());
        let (w, h) = image::image_dimensions(dataset.image_path(name))?;
        dims.push((h as usize, w as usize));
    }
    let predictions: Vec<Vec<ClassPrediction>> = rows.into_iter().map(|(_, p)| p).collect();
    evaluate(dataset.class_names(), &predictions, &labels, &annotations, &dims, tolerance)
}

/// `image,class,confidence,x,y` rows, one per image and class.
pub fn predictions_csv(class_names: &[String], rows: &[(String, Vec<ClassPrediction>)]) -> String {
    let mut out = String::from("image,class,confidence,x,y\n");
    for (name, preds) in rows {
        for (class, p) in class_names.iter().zip(preds) {
            let _ = writeln!(out, "{name},{class},{},{},{}", p.confidence, p.x, p.y);
        }
    }
    out
}
