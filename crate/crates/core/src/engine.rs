//! Training loop: seeded shuffling, per-image augmentation, weighted BCE,
//! SGD with momentum and coupled weight decay, milestone learning-rate
//! schedule with a slower backbone, checkpointing and a per-epoch log.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::augment::{augment_batch, AugmentSpec};
use crate::config::{join_list, parse_list, KeyValues};
use crate::dataset::{compute_stats, count_labels, Dataset, LabeledSplit};
use crate::error::{config_err, Error, Result};
use crate::inference::predict_batch;
use crate::metrics::classification_ap;
use crate::model::{backbone_from_kv, backbone_to_kv, head_from_kv, head_to_kv, Model};
use crate::nn::{BackboneConfig, ParamGroup, ParamTensor};
use crate::objective::{class_weights, wbce_loss, ClassWeights, PresenceLabel};
use crate::raster::Image;
use crate::seed;
use crate::tensor::{Mode, Tensor4};
use crate::wslnet::HeadSpec;

pub const LOG_FILE: &str = "train_log.csv";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub decay: f64,
    pub backbone_lr_divisor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// `fill_value` is replaced by the training-split mean pixel.
    pub augment: AugmentSpec,
    /// Save `checkpoint_eNNN.ckpt` every this many epochs; 0 = final only.
    pub checkpoint_every: usize,
    pub backbone: BackboneConfig,
    pub head: HeadSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl TrainConfig {
    /// Published schedule: 120 epochs, decay at 60 and 100, 30 px masking patches.
    pub fn paper() -> Self {
        Self {
            epochs: 120,
            base_lr: 0.1,
            milestones: vec![60, 100],
            decay: 10.0,
            backbone_lr_divisor: 100.0,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 16,
            seed: 0,
            augment: AugmentSpec::new(vec![0.0; 3]),
            checkpoint_every: 0,
            backbone: BackboneConfig::paper_scale(),
            head: HeadSpec::new(1),
        }
    }

    /// Laptop-sized run on 96x160 images: 40 epochs, decay at 20 and 32,
    /// masking patches scaled with the image (30 px at 480 rows -> 6 px).
    pub fn desk() -> Self {
        let mut cfg = Self::paper();
        cfg.epochs = 40;
        cfg.milestones = vec![20, 32];
        cfg.augment.mask_patch_size = 6;
        cfg.backbone = BackboneConfig::desk();
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(config_err("epochs and batch_size must be positive"));
        }
        if !self.milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(config_err(format!("milestones {:?} must be strictly increasing", self.milestones)));
        }
        if self.milestones.last().is_some_and(|&m| m >= self.epochs) {
            return Err(config_err(format!("milestones {:?} must be below epochs ({})", self.milestones, self.epochs)));
        }
        for (name, v) in [
            ("base_lr", self.base_lr),
            ("decay", self.decay),
            ("backbone_lr_divisor", self.backbone_lr_divisor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(config_err("momentum must be in [0, 1) and weight_decay non-negative"));
        }
        self.augment.validate()?;
        self.backbone.validate()
    }

    pub fn to_kv(&self, kv: &mut KeyValues) {
        kv.set("epochs", self.epochs);
        kv.set("base_lr", self.base_lr);
        kv.set("milestones", join_list(&self.milestones));
        kv.set("decay", self.decay);
        kv.set("backbone_lr_divisor", self.backbone_lr_divisor);
        kv.set("momentum", self.momentum);
        kv.set("weight_decay", self.weight_decay);
        kv.set("batch_size", self.batch_size);
        kv.set("seed", self.seed);
        kv.set("checkpoint_every", self.checkpoint_every);
        kv.set("flip_prob", self.augment.flip_prob);
        kv.set("rotate_prob", self.augment.rotate_prob);
        kv.set("masking", self.augment.masking);
        kv.set("mask_patch_size", self.augment.mask_patch_size);
        kv.set("mask_prob_per_patch", self.augment.mask_prob_per_patch);
        backbone_to_kv(&self.backbone, kv);
        head_to_kv(&self.head, kv);
    }

    /// Overrides fields of `self` present in `kv`.
    pub fn apply_kv(&mut self, kv: &KeyValues) -> Result<()> {
        macro_rules! take {
            ($key:literal, $field:expr) => {
                if let Some(v) = kv.parsed($key)? {
                    $field = v;
                }
            };
        }
        take!("epochs", self.epochs);
        take!("base_lr", self.base_lr);
        take!("decay", self.decay);
        take!("backbone_lr_divisor", self.backbone_lr_divisor);
        take!("momentum", self.momentum);
        take!("weight_decay", self.weight_decay);
        take!("batch_size", self.batch_size);
        take!("seed", self.seed);
        take!("checkpoint_every", self.checkpoint_every);
        take!("flip_prob", self.augment.flip_prob);
        take!("rotate_prob", self.augment.rotate_prob);
        take!("masking", self.augment.masking);
        take!("mask_patch_size", self.augment.mask_patch_size);
        take!("mask_prob_per_patch", self.augment.mask_prob_per_patch);
        if let Some(v) = kv.get("milestones") {
            self.milestones = parse_list(v, "milestones")?;
        }
        self.backbone = backbone_from_kv(kv, &self.backbone)?;
        self.head = head_from_kv(kv, self.head.num_classes)?;
        Ok(())
    }
}

/// `(head lr, backbone lr)` for a 0-based epoch.
pub fn lr_schedule(config: &TrainConfig, epoch: usize) -> Result<(f64, f64)> {
    if epoch >= config.epochs {
        return Err(Error::Input(format!("epoch {epoch} outside 0..{}", config.epochs)));
    }
    let passed = config.milestones.iter().filter(|&&m| epoch >= m).count();
    let head = config.base_lr / config.decay.powi(passed as i32);
    Ok((head, head / config.backbone_lr_divisor))
}

/// One momentum-SGD update; clears the gradient.
pub fn sgd_step(param: &mut ParamTensor<f32>, lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    if !param.grad.is_finite() {
        return Err(Error::Numerical(format!("non-finite gradient in parameter '{}'", param.name)));
    }
    let (lr, mu, wd) = (lr as f32, momentum as f32, weight_decay as f32);
    let value = param.value.data_mut();
    let buf = param.momentum_buffer.data_mut();
    for ((v, b), g) in value.iter_mut().zip(buf.iter_mut()).zip(param.grad.data()) {
        let g = g + wd * *v;
        *b = mu * *b + g;
        *v -= lr * *b;
    }
    param.zero_grad();
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub head_lr: f64,
    pub backbone_lr: f64,
    pub train_loss: f64,
    pub val_map: Option<f64>,
    /// Optimizer steps taken per parameter group in this epoch.
    pub steps: usize,
}

pub fn log_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,head_lr,train_loss,val_mAP\n");
    for r in records {
        let val = r.val_map.map_or(String::new(), |v| v.to_string());
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.head_lr, r.train_loss, val);
    }
    out
}

/// Forward + loss + backward + running-stat update on one batch of already
/// augmented images. Gradients are left in the parameters.
pub fn forward_backward(model: &mut Model, images: &[Image], labels: &[PresenceLabel], weights: &ClassWeights) -> Result<f64> {
    // same-shaped images share one tensor; rotation yields at most two shapes
    let mut groups: Vec<((usize, usize), Vec<usize>)> = Vec::new();
    for (i, img) in images.iter().enumerate() {
        let key = (img.height, img.width);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, idx)) => idx.push(i),
            None => groups.push((key, vec![i])),
        }
    }
    let mut tensors = Vec::with_capacity(groups.len());
    let mut order = Vec::with_capacity(images.len());
    for (_, idx) in &groups {
        let parts = idx
            .iter()
            .map(|&i| images[i].to_tensor(&model.mean_pixel))
            .collect::<Result<Vec<_>>>()?;
        tensors.push(Tensor4::concat_batch(&parts)?);
        order.extend_from_slice(idx);
    }
    let ordered_labels: Vec<PresenceLabel> = order.iter().map(|&i| labels[i].clone()).collect();
    let (out, cache) = model.net.forward(&tensors, Mode::Train)?;
    let scores: Vec<Vec<f64>> = out.scores.iter().map(|s| s.iter().map(|&v| v as f64).collect()).collect();
    let (loss, grads) = wbce_loss(&scores, &ordered_labels, weights)?;
    let grads: Vec<Vec<f32>> = grads.iter().map(|g| g.iter().map(|&v| v as f32).collect()).collect();
    model.net.zero_grad();
    model.net.backward(&cache, &grads)?;
    model.net.update_running_stats(&cache);
    Ok(loss)
}

pub fn apply_updates(model: &mut Model, head_lr: f64, backbone_lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    for p in model.net.params_mut() {
        let lr = match p.group {
            ParamGroup::Head => head_lr,
            ParamGroup::Backbone => backbone_lr,
        };
        sgd_step(p, lr, momentum, weight_decay)?;
    }
    Ok(())
}

/// Eval-mode classification mAP over a labeled split.
pub fn validation_map(model: &Model, split: &LabeledSplit) -> Result<Option<f64>> {
    let images: Vec<Image> = (0..split.len()).map(|i| split.image(i)).collect();
    let preds: Vec<_> = predict_batch(model, &images, 0.5)?.into_iter().map(|(p, _)| p).collect();
    Ok(classification_ap(&preds, &split.labels)?.mean())
}

/// Training inputs. Only image-level labels are available here.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub class_names: Vec<String>,
    pub train: LabeledSplit,
    pub val: Option<LabeledSplit>,
    /// Per-channel mean of the training split, 0..255 units.
    pub mean_pixel: Vec<f64>,
}

impl TrainData {
    /// Loads the image-level view of `train` (and `val`) from a dataset;
    /// boxes stay behind.
    pub fn from_dataset(dataset: &Dataset, train: &str, val: Option<&str>) -> Result<Self> {
        let stats = compute_stats(dataset, train)?;
        Ok(Self {
            class_names: dataset.class_names().to_vec(),
            train: dataset.labeled_split(train)?,
            val: val.map(|v| dataset.labeled_split(v)).transpose()?,
            mean_pixel: stats.mean_pixel,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochRecord>,
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("checkpoint_e{epoch:03}.ckpt"))
}

/// Runs (or resumes) training. With `out_dir`, writes the log after every
/// epoch plus checkpoints at the configured cadence and at the end.
pub fn train(config: &TrainConfig, data: &TrainData, out_dir: Option<&Path>, resume: Option<Model>) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::Input("training split is empty".into()));
    }
    let num_classes = data.class_names.len();
    let weights = class_weights(&count_labels(&data.train.labels, num_classes))?;
    let mut augment = config.augment.clone();
    augment.fill_value = data.mean_pixel.iter().map(|&v| v as f32).collect();

    let mut model = match resume {
        Some(m) => {
            if m.class_names != data.class_names {
                return Err(config_err("checkpoint classes differ from the dataset"));
            }
            m
        }
        None => {
            let mut head = config.head;
            head.num_classes = num_classes;
            Model::new(&config.backbone, head, data.class_names.clone(), data.mean_pixel.clone(), config.seed)?
        }
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let n = data.train.len();
    let mut log = Vec::new();
    for epoch in model.epochs_completed..config.epochs {
        let (head_lr, backbone_lr) = lr_schedule(config, epoch)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::stream(&[config.seed, 0x5F1E, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let raw: Vec<Image> = idx.iter().map(|&i| data.train.image(i)).collect();
            let labels: Vec<PresenceLabel> = idx.iter().map(|&i| data.train.labels[i].clone()).collect();
            let images = augment_batch(&raw, &augment, config.seed, epoch, b)?;
            let loss = forward_backward(&mut model, &images, &labels, &weights)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("loss diverged at epoch {epoch}, batch {b}")));
            }
            apply_updates(&mut model, head_lr, backbone_lr, config.momentum, config.weight_decay)?;
            loss_sum += loss * idx.len() as f64;
            steps += 1;
        }
        model.epochs_completed = epoch + 1;
        let val_map = match &data.val {
            Some(v) if !v.is_empty() => validation_map(&model, v)?,
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            head_lr,
            backbone_lr,
            train_loss: loss_sum / n as f64,
            val_map,
            steps,
        };
        log::info!(
            "epoch {epoch}: loss {:.5}, val mAP {}, lr {head_lr}/{backbone_lr}",
            record.train_loss,
            val_map.map_or("-".to_string(), |v| format!("{v:.4}"))
        );
        log.push(record);
        if let Some(dir) = out_dir {
            std::fs::write(dir.join(LOG_FILE), log_csv(&log))?;
            if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
                model.save(&checkpoint_path(dir, epoch + 1))?;
            }
        }
    }
    if let Some(dir) = out_dir {
        model.save(&dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(TrainOutcome { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::AugmentSpec;

    #[test]
    fn schedule_examples() {
        let cfg = TrainConfig::paper();
        assert_eq!(lr_schedule(&cfg, 0).unwrap(), (0.1, 0.001));
        assert!((lr_schedule(&cfg, 59).unwrap().0 - 0.1).abs() < 1e-15);
        assert!((lr_schedule(&cfg, 60).unwrap().0 - 0.01).abs() < 1e-15);
        assert!((lr_schedule(&cfg, 100).unwrap().0 - 0.001).abs() < 1e-15);
        for e in 0..cfg.epochs {
            let (h, b) = lr_schedule(&cfg, e).unwrap();
            assert_eq!(b, h / 100.0);
        }
        assert!(lr_schedule(&cfg, 120).is_err());
    }

    fn scalar_param(value: f32, grad: f32) -> ParamTensor<f32> {
        let mut p = ParamTensor::vector("p", ParamGroup::Head, vec![value]);
        p.grad.data_mut()[0] = grad;
        p
    }

    #[test]
    fn sgd_examples() {
        let mut p = scalar_param(1.0, 0.0);
        sgd_step(&mut p, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p.value.data()[0], 1.0);

        let mut p = scalar_param(1.0, 0.5);
        sgd_step(&mut p, 0.1, 0.9, 0.0).unwrap();
        assert!((p.value.data()[0] - 0.95).abs() < 1e-7);
        assert_eq!(p.momentum_buffer.data()[0], 0.5);
        assert_eq!(p.grad.data()[0], 0.0);

        let mut p = scalar_param(1.0, 0.5);
        sgd_step(&mut p, 0.1, 0.9, 1e-4).unwrap();
        assert!((p.momentum_buffer.data()[0] - 0.5001).abs() < 1e-7);
        assert!((p.value.data()[0] - 0.94999).abs() < 1e-7);

        let mut p = scalar_param(1.0, f32::NAN);
        let err = sgd_step(&mut p, 0.1, 0.9, 0.0).unwrap_err();
        assert!(err.to_string().contains("'p'"));
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::desk();
        c.validate().unwrap();
        c.milestones = vec![32, 20];
        assert!(c.validate().is_err());
        let mut c = TrainConfig::desk();
        c.milestones = vec![20, 40];
        assert!(c.validate().is_err());
        let mut c = TrainConfig::desk();
        c.base_lr = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn kv_round_trip() {
        let mut c = TrainConfig::desk();
        c.seed = 42;
        c.milestones = vec![3, 7];
        c.augment.masking = false;
        let mut kv = KeyValues::new();
        c.to_kv(&mut kv);
        let mut back = TrainConfig::paper();
        back.apply_kv(&kv).unwrap();
        assert_eq!(back, c);
    }

    /// Tiny images whose class is a bright square at a fixed spot.
    fn toy_split(n: usize) -> LabeledSplit {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let bits = vec![(i % 2) as u8, ((i / 2) % 2) as u8];
            let img = image::RgbImage::from_fn(16, 16, |x, y| {
                if bits[0] == 1 && x < 5 && y < 5 {
                    image::Rgb([250, 20, 20])
                } else if bits[1] == 1 && x > 10 && y > 10 {
                    image::Rgb([20, 20, 250])
                } else {
                    image::Rgb([100, 100, 100])
                }
            });
            images.push(img);
            labels.push(PresenceLabel::new(bits).unwrap());
        }
        LabeledSplit {
            names: (0..n).map(|i| format!("t{i}")).collect(),
            images,
            labels,
        }
    }

    fn toy_config(epochs: usize) -> TrainConfig {
        let mut c = TrainConfig::desk();
        c.epochs = epochs;
        c.milestones = vec![];
        c.backbone = BackboneConfig::from_stages(&[(8, 1, 2), (8, 1, 1)]);
        c.augment = AugmentSpec {
            mask_patch_size: 4,
            ..AugmentSpec::new(vec![0.0; 3])
        };
        c.seed = 3;
        c
    }

    fn toy_data(n: usize) -> TrainData {
        TrainData {
            class_names: vec!["red".into(), "blue".into()],
            train: toy_split(n),
            val: Some(toy_split(8)),
            mean_pixel: vec![100.0; 3],
        }
    }

    #[test]
    fn one_epoch_on_32_images_takes_two_steps() {
        let out = train(&toy_config(1), &toy_data(32), None, None).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.log[0].steps, 2);
        assert_eq!(out.log[0].backbone_lr, out.log[0].head_lr / 100.0);
        let odd = train(&toy_config(1), &toy_data(33), None, None).unwrap();
        assert_eq!(odd.log[0].steps, 3);
    }

    #[test]
    fn deterministic_and_resumable() {
        let dir = tempfile::tempdir().unwrap();
        let data = toy_data(20);
        let full = train(&toy_config(3), &data, Some(dir.path()), None).unwrap();
        let again = train(&toy_config(3), &data, None, None).unwrap();
        let bytes = |m: &Model| m.to_checkpoint().to_bytes().unwrap();
        assert_eq!(bytes(&full.model), bytes(&again.model));
        assert_eq!(log_csv(&full.log), log_csv(&again.log));
        assert_eq!(std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap(), log_csv(&full.log));

        let mut cfg = toy_config(3);
        cfg.checkpoint_every = 1;
        let part_dir = tempfile::tempdir().unwrap();
        train(&cfg, &data, Some(part_dir.path()), None).unwrap();
        let mid = Model::load(&checkpoint_path(part_dir.path(), 1)).unwrap();
        assert_eq!(mid.epochs_completed, 1);
        let resumed = train(&cfg, &data, None, Some(mid)).unwrap();
        assert_eq!(resumed.log.len(), 2);
        assert_eq!(bytes(&resumed.model), bytes(&full.model));
    }

    #[test]
    fn overfits_a_single_batch() {
        let data = toy_split(8);
        let mut model = Model::new(
            &BackboneConfig::from_stages(&[(8, 1, 2), (8, 1, 1)]),
            HeadSpec::new(2),
            vec!["red".into(), "blue".into()],
            vec![100.0; 3],
            1,
        )
        .unwrap();
        let images: Vec<Image> = (0..8).map(|i| data.image(i)).collect();
        let weights = ClassWeights::uniform(2);
        let mut loss = f64::INFINITY;
        for _ in 0..200 {
            loss = forward_backward(&mut model, &images, &data.labels, &weights).unwrap();
            apply_updates(&mut model, 0.1, 0.1, 0.9, 0.0).unwrap();
        }
        assert!(loss < 0.01, "loss {loss}");
    }
}
