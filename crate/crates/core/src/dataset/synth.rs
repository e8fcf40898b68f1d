//! Seeded synthetic scenes: tissue-like background, and for each present
//! class one "tool" made of a class-specific colored head and a generic gray
//! shaft. Boxes and centers describe the head only.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{BBox, SpatialAnnotation, BOXES_FILE, IMAGES_DIR, LABELS_FILE, SPLITS_FILE};
use crate::error::{config_err, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlyphShape {
    Disk,
    Square,
    Triangle,
    Diamond,
    Cross,
    Ring,
    Ellipse,
}

impl GlyphShape {
    /// Membership in unit-radius local coordinates.
    fn contains(self, u: f64, v: f64) -> bool {
        match self {
            GlyphShape::Disk => u * u + v * v <= 1.0,
            GlyphShape::Square => u.abs() <= 0.8 && v.abs() <= 0.8,
            GlyphShape::Triangle => (-0.8..=0.9).contains(&v) && u.abs() <= 0.55 * (v + 0.8),
            GlyphShape::Diamond => u.abs() + v.abs() <= 1.0,
            GlyphShape::Cross => (u.abs() <= 0.3 && v.abs() <= 1.0) || (v.abs() <= 0.3 && u.abs() <= 1.0),
            GlyphShape::Ring => (0.36..=1.0).contains(&(u * u + v * v)),
            GlyphShape::Ellipse => u * u + (v / 0.55).powi(2) <= 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Glyph {
    pub shape: GlyphShape,
    pub color: [u8; 3],
}

pub const SHAFT_COLOR: [u8; 3] = [165, 165, 170];

/// Seven distinguishable glyphs. Every head color has a channel outside the
/// background range, so head pixels can never be produced by the texture.
pub fn glyph_library() -> Vec<(&'static str, Glyph)> {
    use GlyphShape::*;
    vec![
        ("grasper", Glyph { shape: Disk, color: [60, 200, 60] }),
        ("bipolar", Glyph { shape: Square, color: [50, 90, 230] }),
        ("hook", Glyph { shape: Triangle, color: [235, 225, 40] }),
        ("scissors", Glyph { shape: Diamond, color: [40, 215, 215] }),
        ("clipper", Glyph { shape: Cross, color: [225, 50, 225] }),
        ("irrigator", Glyph { shape: Ring, color: [255, 150, 0] }),
        ("specimen_bag", Glyph { shape: Ellipse, color: [245, 245, 245] }),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub class_names: Vec<String>,
    pub glyphs: Vec<Glyph>,
    pub height: usize,
    pub width: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub presence_probs: Vec<f64>,
    pub head_radius: (usize, usize),
    pub shaft_length: (usize, usize),
    pub shaft_width: f64,
    pub min_head_gap: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl SynthSpec {
    /// Five classes at 96x160 with two rare classes.
    pub fn desk() -> Self {
        Self::with_classes(5, vec![0.6, 0.6, 0.6, 0.05, 0.07])
    }

    /// First `num_classes` glyphs of the library.
    pub fn with_classes(num_classes: usize, presence_probs: Vec<f64>) -> Self {
        let lib = glyph_library();
        let take = num_classes.min(lib.len());
        Self {
            class_names: lib[..take].iter().map(|(n, _)| n.to_string()).collect(),
            glyphs: lib[..take].iter().map(|(_, g)| *g).collect(),
            height: 96,
            width: 160,
            train: 2000,
            val: 400,
            test: 600,
            presence_probs,
            head_radius: (7, 10),
            shaft_length: (25, 45),
            shaft_width: 4.0,
            min_head_gap: 4.0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.class_names.len();
        if c == 0 || self.glyphs.len() != c || self.presence_probs.len() != c {
            return Err(config_err(format!(
                "synth spec needs matching class names ({c}), glyphs ({}) and presence probabilities ({})",
                self.glyphs.len(),
                self.presence_probs.len()
            )));
        }
        if let Some(p) = self.presence_probs.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(config_err(format!("presence probabilities must lie in (0, 1), got {p}")));
        }
        for i in 0..c {
            for j in i + 1..c {
                if self.glyphs[i] == self.glyphs[j] || self.glyphs[i].color == self.glyphs[j].color {
                    return Err(config_err(format!("classes {i} and {j} share a glyph")));
                }
            }
        }
        let (rmin, rmax) = self.head_radius;
        if rmin == 0 || rmin > rmax || self.shaft_length.0 > self.shaft_length.1 {
            return Err(config_err("head radius / shaft length ranges are inverted or zero"));
        }
        if self.height < 2 * rmax + 4 || self.width < 2 * rmax + 4 {
            return Err(config_err(format!(
                "image {}x{} too small for heads of radius {rmax}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Pose of one tool in a scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToolPose {
    pub class_id: usize,
    pub cx: usize,
    pub cy: usize,
    pub radius: usize,
    pub head_angle: f64,
    pub shaft_angle: f64,
    pub shaft_length: usize,
}

/// Presence bits and tool poses for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneLayout {
    pub presence: Vec<u8>,
    pub tools: Vec<ToolPose>,
}

pub fn sample_layout(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<SceneLayout> {
    let presence: Vec<u8> = spec.presence_probs.iter().map(|&p| (rng.gen::<f64>() < p) as u8).collect();
    let mut tools: Vec<ToolPose> = Vec::new();
    for (class_id, _) in presence.iter().enumerate().filter(|(_, &b)| b == 1) {
        let radius = rng.gen_range(spec.head_radius.0..=spec.head_radius.1);
        let head_angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let shaft_angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let shaft_length = rng.gen_range(spec.shaft_length.0..=spec.shaft_length.1);
        let mut placed = None;
        for _ in 0..500 {
            let cx = rng.gen_range(radius + 1..spec.width - radius - 1);
            let cy = rng.gen_range(radius + 1..spec.height - radius - 1);
            let clear = tools.iter().all(|t| {
                let d = ((t.cx as f64 - cx as f64).powi(2) + (t.cy as f64 - cy as f64).powi(2)).sqrt();
                d >= (t.radius + radius) as f64 + spec.min_head_gap
            });
            if clear {
                placed = Some((cx, cy));
                break;
            }
        }
        let (cx, cy) = placed.ok_or_else(|| config_err("could not place all heads without overlap; enlarge the image"))?;
        tools.push(ToolPose {
            class_id,
            cx,
            cy,
            radius,
            head_angle,
            shaft_angle,
            shaft_length,
        });
    }
    Ok(SceneLayout { presence, tools })
}

fn background(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> image::RgbImage {
    let (gh, gw) = (7usize, 11usize);
    let grid: Vec<f64> = (0..gh * gw).map(|_| rng.gen::<f64>()).collect();
    let (h, w) = (spec.height, spec.width);
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let fy = y as f64 * (gh - 1) as f64 / (h - 1).max(1) as f64;
        let fx = x as f64 * (gw - 1) as f64 / (w - 1).max(1) as f64;
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(gh - 1), (x0 + 1).min(gw - 1));
        let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
        let top = grid[y0 * gw + x0] * (1.0 - tx) + grid[y0 * gw + x1] * tx;
        let bot = grid[y1 * gw + x0] * (1.0 - tx) + grid[y1 * gw + x1] * tx;
        let v = top * (1.0 - ty) + bot * ty;
        let n: f64 = rng.gen_range(-8.0..8.0);
        image::Rgb([
            (150.0 + 50.0 * v + n).clamp(120.0, 210.0) as u8,
            (60.0 + 30.0 * v + 0.5 * n).clamp(40.0, 100.0) as u8,
            (65.0 + 25.0 * v + 0.5 * n).clamp(40.0, 100.0) as u8,
        ])
    })
}

fn segment_distance(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    ((px - ax - t * dx).powi(2) + (py - ay - t * dy).powi(2)).sqrt()
}

/// Paints a layout; returns the image and one annotation per tool.
pub fn render(spec: &SynthSpec, layout: &SceneLayout, rng: &mut ChaCha8Rng) -> (image::RgbImage, Vec<SpatialAnnotation>) {
    let mut img = background(spec, rng);
    let (w, h) = (spec.width as i64, spec.height as i64);
    let half = spec.shaft_width / 2.0;
    for t in &layout.tools {
        let (ax, ay) = (t.cx as f64, t.cy as f64);
        let (bx, by) = (ax + t.shaft_length as f64 * t.shaft_angle.cos(), ay + t.shaft_length as f64 * t.shaft_angle.sin());
        let x_lo = (ax.min(bx) - half).floor().max(0.0) as i64;
        let x_hi = ((ax.max(bx) + half).ceil() as i64).min(w - 1);
        let y_lo = (ay.min(by) - half).floor().max(0.0) as i64;
        let y_hi = ((ay.max(by) + half).ceil() as i64).min(h - 1);
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                if segment_distance(x as f64, y as f64, ax, ay, bx, by) <= half {
                    img.put_pixel(x as u32, y as u32, image::Rgb(SHAFT_COLOR));
                }
            }
        }
    }
    let mut annotations = Vec::with_capacity(layout.tools.len());
    for t in &layout.tools {
        let glyph = spec.glyphs[t.class_id];
        let r = t.radius as f64;
        let (s, c) = t.head_angle.sin_cos();
        let reach = t.radius as i64 + 1;
        let mut bbox = BBox {
            x_min: f64::INFINITY,
            y_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for y in (t.cy as i64 - reach).max(0)..=(t.cy as i64 + reach).min(h - 1) {
            for x in (t.cx as i64 - reach).max(0)..=(t.cx as i64 + reach).min(w - 1) {
                let dx = (x - t.cx as i64) as f64 / r;
                let dy = (y - t.cy as i64) as f64 / r;
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                if glyph.shape.contains(u, v) {
                    img.put_pixel(x as u32, y as u32, image::Rgb(glyph.color));
                    bbox.x_min = bbox.x_min.min(x as f64);
                    bbox.y_min = bbox.y_min.min(y as f64);
                    bbox.x_max = bbox.x_max.max(x as f64);
                    bbox.y_max = bbox.y_max.max(y as f64);
                }
            }
        }
        annotations.push(SpatialAnnotation {
            class_id: t.class_id,
            bbox,
            center: (t.cx as f64, t.cy as f64),
        });
    }
    (img, annotations)
}

/// Per-split image counts and presence tallies of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub splits: BTreeMap<String, (usize, Vec<u64>)>,
}

pub fn scene_stream(seed: u64, split: usize, index: usize) -> ChaCha8Rng {
    seed::stream(&[seed, 0x5C3E, split as u64, index as u64])
}

/// Generates one image with its labels and annotations.
pub fn generate_scene(spec: &SynthSpec, seed: u64, split: usize, index: usize) -> Result<(SceneLayout, image::RgbImage, Vec<SpatialAnnotation>)> {
    let mut rng = scene_stream(seed, split, index);
    let layout = sample_layout(spec, &mut rng)?;
    let (img, ann) = render(spec, &layout, &mut rng);
    Ok((layout, img, ann))
}

/// Writes a complete dataset directory (see the module docs for the layout).
pub fn synth_generate(spec: &SynthSpec, seed: u64, dir: &Path) -> Result<SynthSummary> {
    spec.validate()?;
    std::fs::create_dir_all(dir.join(IMAGES_DIR))?;
    let mut labels = format!("image,{}\n", spec.class_names.join(","));
    let mut boxes = String::from("image,class,x_min,y_min,x_max,y_max,cx,cy\n");
    let mut splits: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut summary = SynthSummary { splits: BTreeMap::new() };
    for (si, (split, count)) in [("train", spec.train), ("val", spec.val), ("test", spec.test)].into_iter().enumerate() {
        let mut tally = vec![0u64; spec.num_classes()];
        let names = splits.entry(split.to_string()).or_default();
        for i in 0..count {
            let name = format!("{split}_{i:05}.png");
            let (layout, img, ann) = generate_scene(spec, seed, si, i)?;
            img.save(dir.join(IMAGES_DIR).join(&name))?;
            labels.push_str(&name);
            for (c, &b) in layout.presence.iter().enumerate() {
                tally[c] += b as u64;
                let _ = write!(labels, ",{b}");
            }
            labels.push('\n');
            for a in &ann {
                let _ = writeln!(
                    boxes,
                    "{name},{},{},{},{},{},{},{}",
                    spec.class_names[a.class_id], a.bbox.x_min, a.bbox.y_min, a.bbox.x_max, a.bbox.y_max, a.center.0, a.center.1
                );
            }
            names.push(name);
        }
        summary.splits.insert(split.to_string(), (count, tally));
    }
    std::fs::write(dir.join(LABELS_FILE), labels)?;
    std::fs::write(dir.join(BOXES_FILE), boxes)?;
    let json = serde_json::to_string_pretty(&splits).map_err(|e| config_err(e.to_string()))?;
    std::fs::write(dir.join(SPLITS_FILE), json + "\n")?;
    Ok(summary)
}
