//! On-disk dataset format, split statistics, and the synthetic generator.
//!
//! A dataset directory contains:
//!
//! ```text
//! images/        8-bit RGB PNG or PPM files
//! labels.csv     image,<class names...>       (0/1 cells)
//! boxes.csv      image,class,x_min,y_min,x_max,y_max,cx,cy   (optional)
//! splits.json    {"train": [...], "val": [...], "test": [...]}
//! ```
//!
//! Training consumes a [`LabeledSplit`], which carries pixels and presence
//! labels only. Boxes and centers are reachable solely through
//! [`Dataset::annotations`], used by evaluation.

pub mod synth;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use crate::error::{format_err, Error, Result};
use crate::objective::PresenceLabel;
use crate::raster::Image;

pub use synth::{synth_generate, Glyph, GlyphShape, SynthSpec, SynthSummary};

pub const LABELS_FILE: &str = "labels.csv";
pub const BOXES_FILE: &str = "boxes.csv";
pub const SPLITS_FILE: &str = "splits.json";
pub const IMAGES_DIR: &str = "images";

/// Axis-aligned box in input pixel coordinates (inclusive extents).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// Chebyshev distance from a point to the box; 0 inside.
    pub fn chebyshev_distance(&self, x: f64, y: f64) -> f64 {
        let dx = (self.x_min - x).max(x - self.x_max).max(0.0);
        let dy = (self.y_min - y).max(y - self.y_max).max(0.0);
        dx.max(dy)
    }

    pub fn contains_with_tolerance(&self, x: f64, y: f64, tolerance: f64) -> bool {
        x >= self.x_min - tolerance && x <= self.x_max + tolerance && y >= self.y_min - tolerance && y <= self.y_max + tolerance
    }
}

/// Evaluation-only ground truth for one object instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialAnnotation {
    pub class_id: usize,
    pub bbox: BBox,
    /// `(x, y)` in input pixels.
    pub center: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    /// Images in which each class is present.
    pub counts: Vec<u64>,
    /// Per-channel mean over every pixel of the split, 0..=255.
    pub mean_pixel: Vec<f64>,
    pub image_count: usize,
}

/// Handle on a dataset directory. Images are read on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    class_names: Vec<String>,
    labels: BTreeMap<String, PresenceLabel>,
    annotations: Option<HashMap<String, Vec<SpatialAnnotation>>>,
    splits: BTreeMap<String, Vec<String>>,
}

/// Pixels and presence labels of one split, preloaded for training.
#[derive(Debug, Clone)]
pub struct LabeledSplit {
    pub names: Vec<String>,
    pub images: Vec<image::RgbImage>,
    pub labels: Vec<PresenceLabel>,
}

impl LabeledSplit {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn image(&self, i: usize) -> Image {
        Image::from_rgb8(&self.images[i])
    }

    /// First `n` entries.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            names: self.names[..n].to_vec(),
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

fn read_image(path: &Path) -> Result<image::RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

fn parse_bit(cell: &str, file: &Path, row: usize) -> Result<u8> {
    match cell.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(format_err(file, format!("row {row}: label cell '{other}' is not 0 or 1"))),
    }
}

/// Opens a dataset directory and validates its index files.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let labels_path = dir.join(LABELS_FILE);
    if !labels_path.is_file() {
        return Err(format_err(&labels_path, "labels file is missing"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&labels_path)
        .map_err(|e| format_err(&labels_path, e.to_string()))?;
    let header = reader.headers().map_err(|e| format_err(&labels_path, e.to_string()))?.clone();
    if header.get(0) != Some("image") || header.len() < 2 {
        return Err(format_err(&labels_path, "header must be image,<class names...>"));
    }
    let class_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();

    let mut labels = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| format_err(&labels_path, format!("row {row}: {e}")))?;
        if rec.len() != class_names.len() + 1 {
            return Err(format_err(&labels_path, format!("row {row}: expected {} cells, got {}", class_names.len() + 1, rec.len())));
        }
        let name = rec[0].to_string();
        if !dir.join(IMAGES_DIR).join(&name).is_file() {
            return Err(format_err(&labels_path, format!("row {row}: image '{name}' not found in {IMAGES_DIR}/")));
        }
        let bits = rec.iter().skip(1).map(|c| parse_bit(c, &labels_path, row)).collect::<Result<Vec<_>>>()?;
        if labels.insert(name.clone(), PresenceLabel::new(bits)?).is_some() {
            return Err(format_err(&labels_path, format!("row {row}: duplicate image '{name}'")));
        }
    }

    let boxes_path = dir.join(BOXES_FILE);
    let annotations = if boxes_path.is_file() {
        Some(read_boxes(&boxes_path, &class_names, &labels)?)
    } else {
        None
    };

    let splits_path = dir.join(SPLITS_FILE);
    let splits: BTreeMap<String, Vec<String>> = if splits_path.is_file() {
        let text = std::fs::read_to_string(&splits_path)?;
        serde_json::from_str(&text).map_err(|e| format_err(&splits_path, e.to_string()))?
    } else {
        BTreeMap::from([("all".to_string(), labels.keys().cloned().collect())])
    };
    for (split, names) in &splits {
        if let Some(missing) = names.iter().find(|n| !labels.contains_key(*n)) {
            return Err(format_err(&splits_path, format!("split '{split}' lists '{missing}' which has no labels row")));
        }
    }

    Ok(Dataset {
        root: dir.to_path_buf(),
        class_names,
        labels,
        annotations,
        splits,
    })
}

fn read_boxes(
    path: &Path,
    class_names: &[String],
    labels: &BTreeMap<String, PresenceLabel>,
) -> Result<HashMap<String, Vec<SpatialAnnotation>>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| format_err(path, e.to_string()))?;
    let header = reader.headers().map_err(|e| format_err(path, e.to_string()))?;
    let expected = ["image", "class", "x_min", "y_min", "x_max", "y_max", "cx", "cy"];
    if header.iter().ne(expected.iter().copied()) {
        return Err(format_err(path, format!("header must be {}", expected.join(","))));
    }
    let mut out: HashMap<String, Vec<SpatialAnnotation>> = HashMap::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| format_err(path, format!("row {row}: {e}")))?;
        let image = rec[0].to_string();
        if !labels.contains_key(&image) {
            return Err(format_err(path, format!("row {row}: image '{image}' has no labels row")));
        }
        let class_id = class_names
            .iter()
            .position(|c| c == &rec[1])
            .ok_or_else(|| format_err(path, format!("row {row}: unknown class '{}'", &rec[1])))?;
        let num = |k: usize| -> Result<f64> {
            rec[k].trim().parse::<f64>().map_err(|_| format_err(path, format!("row {row}: '{}' is not a number", &rec[k])))
        };
        let bbox = BBox {
            x_min: num(2)?,
            y_min: num(3)?,
            x_max: num(4)?,
            y_max: num(5)?,
        };
        if !(bbox.x_min <= bbox.x_max && bbox.y_min <= bbox.y_max) {
            return Err(format_err(path, format!("row {row}: box has negative extent")));
        }
        out.entry(image).or_default().push(SpatialAnnotation {
            class_id,
            bbox,
            center: (num(6)?, num(7)?),
        });
    }
    Ok(out)
}

impl Dataset {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn split_names(&self) -> impl Iterator<Item = &str> {
        self.splits.keys().map(String::as_str)
    }

    pub fn split(&self, name: &str) -> Result<&[String]> {
        self.splits
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Input(format!("dataset has no split '{name}'")))
    }

    pub fn label(&self, image: &str) -> Option<&PresenceLabel> {
        self.labels.get(image)
    }

    pub fn has_annotations(&self) -> bool {
        self.annotations.is_some()
    }

    /// Ground-truth boxes for one image (empty if none were recorded).
    pub fn annotations(&self, image: &str) -> &[SpatialAnnotation] {
        self.annotations
            .as_ref()
            .and_then(|a| a.get(image))
            .map_or(&[], Vec::as_slice)
    }

    pub fn image_path(&self, image: &str) -> PathBuf {
        self.root.join(IMAGES_DIR).join(image)
    }

    pub fn load_rgb(&self, image: &str) -> Result<image::RgbImage> {
        read_image(&self.image_path(image))
    }

    pub fn load_image(&self, image: &str) -> Result<Image> {
        Ok(Image::from_rgb8(&self.load_rgb(image)?))
    }

    /// Labels matrix of a split, rows in split order.
    pub fn label_matrix(&self, split: &str) -> Result<Vec<PresenceLabel>> {
        Ok(self.split(split)?.iter().map(|n| self.labels[n].clone()).collect())
    }

    /// Loads the pixels and labels of a split for training.
    pub fn labeled_split(&self, split: &str) -> Result<LabeledSplit> {
        let names = self.split(split)?.to_vec();
        let images = names.iter().map(|n| self.load_rgb(n)).collect::<Result<Vec<_>>>()?;
        let labels = names.iter().map(|n| self.labels[n].clone()).collect();
        Ok(LabeledSplit { names, images, labels })
    }
}

/// Per-class presence counts and mean pixel of one split.
pub fn compute_stats(dataset: &Dataset, split: &str) -> Result<DatasetStats> {
    let names = dataset.split(split)?;
    if names.is_empty() {
        return Err(Error::Input(format!("split '{split}' is empty")));
    }
    let labels = dataset.label_matrix(split)?;
    let mut sums = [0.0f64; 3];
    let mut pixels = 0u64;
    for name in names {
        let img = dataset.load_rgb(name)?;
        for p in img.pixels() {
            for c in 0..3 {
                sums[c] += p[c] as f64;
            }
        }
        pixels += img.width() as u64 * img.height() as u64;
    }
    Ok(DatasetStats {
        counts: count_labels(&labels, dataset.num_classes()),
        mean_pixel: sums.iter().map(|s| s / pixels as f64).collect(),
        image_count: names.len(),
    })
}

pub fn count_labels(labels: &[PresenceLabel], num_classes: usize) -> Vec<u64> {
    let mut counts = vec![0u64; num_classes];
    for l in labels {
        for (c, &b) in l.bits().iter().enumerate() {
            counts[c] += b as u64;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_fixture(dir: &Path) {
        fs::create_dir_all(dir.join(IMAGES_DIR)).unwrap();
        for (i, shade) in [0u8, 100, 200].iter().enumerate() {
            let img = image::RgbImage::from_pixel(4, 2, image::Rgb([*shade, *shade / 2, 0]));
            img.save(dir.join(IMAGES_DIR).join(format!("f{i}.png"))).unwrap();
        }
        fs::write(dir.join(LABELS_FILE), "image,cat,dog\nf0.png,1,0\nf1.png,1,1\nf2.png,0,0\n").unwrap();
        fs::write(
            dir.join(BOXES_FILE),
            "image,class,x_min,y_min,x_max,y_max,cx,cy\nf0.png,cat,0,0,2,1,1,0.5\nf1.png,dog,1,0,3,1,2,0.5\n",
        )
        .unwrap();
        fs::write(dir.join(SPLITS_FILE), r#"{"train":["f0.png","f1.png"],"test":["f2.png"]}"#).unwrap();
    }

    #[test]
    fn fixture_parses() {
        let tmp = tempfile::tempdir().unwrap();
        write_fixture(tmp.path());
        let ds = load_dataset(tmp.path()).unwrap();
        assert_eq!(ds.class_names(), ["cat", "dog"]);
        let m: Vec<Vec<u8>> = ds.label_matrix("train").unwrap().iter().map(|l| l.bits().to_vec()).collect();
        assert_eq!(m, vec![vec![1, 0], vec![1, 1]]);
        assert_eq!(ds.annotations("f1.png")[0].class_id, 1);
        assert!(ds.annotations("f2.png").is_empty());

        let stats = compute_stats(&ds, "train").unwrap();
        assert_eq!(stats.counts, vec![2, 1]);
        assert_eq!(stats.mean_pixel, vec![50.0, 25.0, 0.0]);

        let test = compute_stats(&ds, "test").unwrap();
        assert_eq!(test.mean_pixel, vec![200.0, 100.0, 0.0]);
        assert_eq!(test.counts, vec![0, 0]);
    }

    #[test]
    fn missing_labels_file() {
        let tmp = tempfile::tempdir().unwrap();
        let err = load_dataset(tmp.path()).unwrap_err();
        assert!(err.to_string().contains("labels.csv"), "{err}");
    }

    #[test]
    fn row_with_missing_image() {
        let tmp = tempfile::tempdir().unwrap();
        write_fixture(tmp.path());
        fs::write(tmp.path().join(LABELS_FILE), "image,cat,dog\nf0.png,1,0\nghost.png,0,1\n").unwrap();
        let err = load_dataset(tmp.path()).unwrap_err().to_string();
        assert!(err.contains("row 3") && err.contains("ghost.png"), "{err}");
    }

    #[test]
    fn non_binary_cell() {
        let tmp = tempfile::tempdir().unwrap();
        write_fixture(tmp.path());
        fs::write(tmp.path().join(LABELS_FILE), "image,cat,dog\nf0.png,1,2\n").unwrap();
        assert!(load_dataset(tmp.path()).is_err());
    }

    #[test]
    fn empty_split_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        write_fixture(tmp.path());
        fs::write(tmp.path().join(SPLITS_FILE), r#"{"train":[]}"#).unwrap();
        let ds = load_dataset(tmp.path()).unwrap();
        assert!(matches!(compute_stats(&ds, "train"), Err(Error::Input(_))));
    }

    #[test]
    fn chebyshev_and_tolerance() {
        let b = BBox { x_min: 10.0, y_min: 10.0, x_max: 200.0, y_max: 50.0 };
        assert_eq!(b.chebyshev_distance(100.0, 20.0), 0.0);
        assert_eq!(b.chebyshev_distance(205.0, 20.0), 5.0);
        assert!(b.contains_with_tolerance(205.0, 20.0, 8.0));
        assert!(b.contains_with_tolerance(208.0, 58.0, 8.0));
        assert!(!b.contains_with_tolerance(215.0, 20.0, 8.0));
    }
}
