//! Evaluation: classification AP, localization AP with a pixel tolerance and
//! center-distance error as a percentage of the image diagonal.
//!
//! AP uses all-point interpolation over the precision envelope. Precision and
//! recall are sampled once per distinct confidence value, so the result does
//! not depend on how tied items are ordered.

use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::{BBox, SpatialAnnotation};
use crate::error::{Error, Result};
use crate::objective::PresenceLabel;

/// Per-class peak and confidence for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassPrediction {
    pub confidence: f64,
    pub x: f64,
    pub y: f64,
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PRCurve {
    /// (confidence, is_positive), sorted by decreasing confidence, ties in input order.
    pub ranked: Vec<(f64, bool)>,
    /// One entry per distinct confidence, highest first.
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub ap: f64,
}

/// Builds the PR curve of `records`. `num_positives` is the recall
/// denominator and may exceed the number of positive records.
pub fn pr_curve(records: &[(f64, bool)], num_positives: usize) -> Result<PRCurve> {
    if num_positives == 0 {
        return Err(Error::Input("AP is undefined without positives".into()));
    }
    if let Some((c, _)) = records.iter().find(|(c, _)| !c.is_finite()) {
        return Err(Error::Numerical(format!("non-finite confidence {c}")));
    }
    let mut ranked = records.to_vec();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (mut thresholds, mut precision, mut recall) = (Vec::new(), Vec::new(), Vec::new());
    let mut tp = 0usize;
    for (i, &(conf, pos)) in ranked.iter().enumerate() {
        tp += pos as usize;
        let group_end = ranked.get(i + 1).map_or(true, |next| next.0 != conf);
        if group_end {
            thresholds.push(conf);
            precision.push(tp as f64 / (i + 1) as f64);
            recall.push(tp as f64 / num_positives as f64);
        }
    }
    let ap = envelope_ap(&precision, &recall);
    Ok(PRCurve {
        ranked,
        thresholds,
        precision,
        recall,
        ap,
    })
}

fn envelope_ap(precision: &[f64], recall: &[f64]) -> f64 {
    let mut env = precision.to_vec();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    let mut prev = 0.0;
    let mut ap = 0.0;
    for (r, p) in recall.iter().zip(&env) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ap
}

pub fn average_precision(records: &[(f64, bool)], num_positives: usize) -> Result<f64> {
    Ok(pr_curve(records, num_positives)?.ap)
}

/// Per-class AP; `None` marks classes without positives.
#[derive(Debug, Clone, PartialEq)]
pub struct ApReport {
    pub per_class: Vec<Option<f64>>,
    pub curves: Vec<Option<PRCurve>>,
}

impl ApReport {
    /// Mean over defined classes.
    pub fn mean(&self) -> Option<f64> {
        mean_defined(&self.per_class)
    }
}

fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

fn check_shapes(predictions: &[Vec<ClassPrediction>], labels: &[PresenceLabel]) -> Result<usize> {
    if predictions.len() != labels.len() {
        return Err(Error::Input(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    let c = labels.first().map_or(0, |l| l.len());
    if let Some(i) = predictions.iter().position(|p| p.len() != c) {
        return Err(Error::Input(format!("image {i} has {} class predictions, expected {c}", predictions[i].len())));
    }
    if let Some(i) = labels.iter().position(|l| l.len() != c) {
        return Err(Error::Input(format!("label {i} has {} classes, expected {c}", labels[i].len())));
    }
    Ok(c)
}

fn report_from(records: Vec<Vec<(f64, bool)>>, positives: Vec<usize>, kind: &str) -> Result<ApReport> {
    let mut per_class = Vec::new();
    let mut curves = Vec::new();
    for (c, (rec, npos)) in records.into_iter().zip(positives).enumerate() {
        if npos == 0 {
            log::warn!("{kind} AP undefined for class {c}: no positives; excluded from the mean");
            per_class.push(None);
            curves.push(None);
        } else {
            let curve = pr_curve(&rec, npos)?;
            per_class.push(Some(curve.ap));
            curves.push(Some(curve));
        }
    }
    Ok(ApReport { per_class, curves })
}

/// Ranks all images by confidence per class against the presence labels.
pub fn classification_ap(predictions: &[Vec<ClassPrediction>], labels: &[PresenceLabel]) -> Result<ApReport> {
    let c = check_shapes(predictions, labels)?;
    let mut records = vec![Vec::with_capacity(labels.len()); c];
    let mut positives = vec![0usize; c];
    for (pred, label) in predictions.iter().zip(labels) {
        for k in 0..c {
            let pos = label.is_present(k);
            positives[k] += pos as usize;
            records[k].push((pred[k].confidence, pos));
        }
    }
    report_from(records, positives, "classification")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationMatch {
    pub true_positive: bool,
    /// Index of the closest box, if any.
    pub matched: Option<usize>,
}

/// Matches a peak against the closest box (Chebyshev distance, zero inside);
/// TP iff that distance is within `tolerance`, i.e. the peak lies in the box
/// grown by `tolerance` on every side.
pub fn localization_match(peak: (f64, f64), boxes: &[BBox], tolerance: f64) -> LocalizationMatch {
    let mut best: Option<(usize, f64)> = None;
    for (i, b) in boxes.iter().enumerate() {
        let d = b.chebyshev_distance(peak.0, peak.1);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    LocalizationMatch {
        true_positive: best.is_some_and(|(_, d)| d <= tolerance),
        matched: best.map(|(i, _)| i),
    }
}

fn class_boxes(annotations: &[SpatialAnnotation], class: usize) -> Vec<&SpatialAnnotation> {
    annotations.iter().filter(|a| a.class_id == class).collect()
}

/// Ranks only the images where each class is present; a peak outside every
/// expanded same-class box is a false positive.
pub fn localization_ap(
    predictions: &[Vec<ClassPrediction>],
    labels: &[PresenceLabel],
    annotations: &[Vec<SpatialAnnotation>],
    tolerance: f64,
) -> Result<ApReport> {
    let c = check_shapes(predictions, labels)?;
    if annotations.len() != labels.len() {
        return Err(Error::Input(format!("{} annotation lists for {} images", annotations.len(), labels.len())));
    }
    let mut records = vec![Vec::new(); c];
    let mut positives = vec![0usize; c];
    for ((pred, label), ann) in predictions.iter().zip(labels).zip(annotations) {
        for k in (0..c).filter(|&k| label.is_present(k)) {
            let boxes: Vec<BBox> = class_boxes(ann, k).iter().map(|a| a.bbox).collect();
            let m = localization_match((pred[k].x, pred[k].y), &boxes, tolerance);
            positives[k] += 1;
            records[k].push((pred[k].confidence, m.true_positive));
        }
    }
    report_from(records, positives, "localization")
}

/// `100 * |peak - center| / diagonal`.
pub fn distance_error(peak: (f64, f64), center: (f64, f64), height: usize, width: usize) -> f64 {
    let d = (peak.0 - center.0).hypot(peak.1 - center.1);
    100.0 * d / (height as f64).hypot(width as f64)
}

/// Mean distance to the center of the closest same-class instance over
/// frames where the class is present and annotated.
pub fn mean_distance_error(
    predictions: &[Vec<ClassPrediction>],
    labels: &[PresenceLabel],
    annotations: &[Vec<SpatialAnnotation>],
    dims: &[(usize, usize)],
) -> Result<Vec<Option<f64>>> {
    let c = check_shapes(predictions, labels)?;
    if annotations.len() != labels.len() || dims.len() != labels.len() {
        return Err(Error::Input("annotations and image sizes must cover every image".into()));
    }
    let mut sums = vec![(0.0, 0usize); c];
    for (((pred, label), ann), &(h, w)) in predictions.iter().zip(labels).zip(annotations).zip(dims) {
        for k in (0..c).filter(|&k| label.is_present(k)) {
            let inst = class_boxes(ann, k);
            let boxes: Vec<BBox> = inst.iter().map(|a| a.bbox).collect();
            let peak = (pred[k].x, pred[k].y);
            if let Some(i) = localization_match(peak, &boxes, 0.0).matched {
                sums[k].0 += distance_error(peak, inst[i].center, h, w);
                sums[k].1 += 1;
            }
        }
    }
    Ok(sums.into_iter().map(|(s, n)| (n > 0).then(|| s / n as f64)).collect())
}

/// Complete evaluation of one annotated split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub classification: ApReport,
    pub localization: ApReport,
    pub mean_distance_pct: Vec<Option<f64>>,
}

impl EvalReport {
    pub fn classification_map(&self) -> Option<f64> {
        self.classification.mean()
    }

    pub fn localization_map(&self) -> Option<f64> {
        self.localization.mean()
    }

    /// Mean of the per-class mean distances.
    pub fn mean_distance(&self) -> Option<f64> {
        mean_defined(&self.mean_distance_pct)
    }

    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let mut out = String::from("class,classification_ap,localization_ap,mean_distance_pct\n");
        for (c, name) in self.class_names.iter().enumerate() {
            let _ = writeln!(
                out,
                "{name},{},{},{}",
                fmt(self.classification.per_class[c]),
                fmt(self.localization.per_class[c]),
                fmt(self.mean_distance_pct[c])
            );
        }
        let _ = writeln!(
            out,
            "mAP,{},{},{}",
            fmt(self.classification_map()),
            fmt(self.localization_map()),
            fmt(self.mean_distance())
        );
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Writes `pr_classification.csv` and `pr_localization.csv` into `dir`.
    pub fn write_pr_curves(&self, dir: &Path) -> Result<()> {
        for (kind, report) in [("classification", &self.classification), ("localization", &self.localization)] {
            std::fs::write(dir.join(format!("pr_{kind}.csv")), pr_curves_csv(&self.class_names, report))?;
        }
        Ok(())
    }
}

pub fn pr_curves_csv(class_names: &[String], report: &ApReport) -> String {
    let mut out = String::from("class,threshold,precision,recall\n");
    for (name, curve) in class_names.iter().zip(&report.curves) {
        if let Some(curve) = curve {
            for i in 0..curve.thresholds.len() {
                let _ = writeln!(out, "{name},{},{},{}", curve.thresholds[i], curve.precision[i], curve.recall[i]);
            }
        }
    }
    out
}

pub fn evaluate(
    class_names: &[String],
    predictions: &[Vec<ClassPrediction>],
    labels: &[PresenceLabel],
    annotations: &[Vec<SpatialAnnotation>],
    dims: &[(usize, usize)],
    tolerance: f64,
) -> Result<EvalReport> {
    let c = check_shapes(predictions, labels)?;
    if class_names.len() != c && !labels.is_empty() {
        return Err(Error::Input(format!("{} class names for {c} classes", class_names.len())));
    }
    Ok(EvalReport {
        class_names: class_names.to_vec(),
        classification: classification_ap(predictions, labels)?,
        localization: localization_ap(predictions, labels, annotations, tolerance)?,
        mean_distance_pct: mean_distance_error(predictions, labels, annotations, dims)?,
    })
}
