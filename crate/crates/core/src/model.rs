//! A trained network together with everything needed to use it: class
//! names, the input normalization and training progress. Saved as a
//! checkpoint whose header is canonical `key=value` text.

use std::path::Path;

use crate::config::{join_list, parse_list, KeyValues};
use crate::error::{config_err, format_err, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{BackboneConfig, ParamTensor, StageConfig};
use crate::tensor::{Scalar, Tensor4};
use crate::wslnet::{HeadSpec, Pooling, WslNet};

#[derive(Debug, Clone)]
pub struct Model {
    pub net: WslNet<f32>,
    pub class_names: Vec<String>,
    /// Per-channel training-set mean, in 0..255 units.
    pub mean_pixel: Vec<f64>,
    pub epochs_completed: usize,
}

fn stages_text(stages: &[StageConfig]) -> String {
    let parts: Vec<String> = stages
        .iter()
        .map(|s| format!("{}x{}s{}", s.out_channels, s.num_blocks, s.stride))
        .collect();
    parts.join(",")
}

/// Parses `64x2s1,128x2s2`-style stage lists.
pub fn parse_stages(text: &str) -> Result<Vec<StageConfig>> {
    text.split(',')
        .map(|s| {
            let bad = || config_err(format!("bad stage '{s}', expected <channels>x<blocks>s<stride>"));
            let (c, rest) = s.trim().split_once('x').ok_or_else(bad)?;
            let (b, st) = rest.split_once('s').ok_or_else(bad)?;
            Ok(StageConfig {
                out_channels: c.parse().map_err(|_| bad())?,
                num_blocks: b.parse().map_err(|_| bad())?,
                stride: st.parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn backbone_to_kv(cfg: &BackboneConfig, kv: &mut KeyValues) {
    kv.set("backbone.in_channels", cfg.in_channels);
    kv.set("backbone.kernel", cfg.kernel);
    kv.set("backbone.stages", stages_text(&cfg.stages));
    kv.set("backbone.residual", cfg.residual);
    kv.set("backbone.bn_momentum", cfg.bn_momentum);
    kv.set("backbone.bn_epsilon", cfg.bn_epsilon);
}

/// Missing keys keep the values of `base`.
pub fn backbone_from_kv(kv: &KeyValues, base: &BackboneConfig) -> Result<BackboneConfig> {
    let mut cfg = base.clone();
    if let Some(v) = kv.parsed("backbone.in_channels")? {
        cfg.in_channels = v;
    }
    if let Some(v) = kv.parsed("backbone.kernel")? {
        cfg.kernel = v;
    }
    if let Some(v) = kv.get("backbone.stages") {
        cfg.stages = parse_stages(v)?;
    }
    if let Some(v) = kv.parsed("backbone.residual")? {
        cfg.residual = v;
    }
    if let Some(v) = kv.parsed("backbone.bn_momentum")? {
        cfg.bn_momentum = v;
    }
    if let Some(v) = kv.parsed("backbone.bn_epsilon")? {
        cfg.bn_epsilon = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn head_to_kv(spec: &HeadSpec, kv: &mut KeyValues) {
    kv.set("head.maps_per_class", spec.maps_per_class);
    kv.set("head.pooling", spec.pooling.as_str());
    kv.set("head.alpha", spec.alpha);
}

pub fn head_from_kv(kv: &KeyValues, num_classes: usize) -> Result<HeadSpec> {
    let mut spec = HeadSpec::new(num_classes);
    if let Some(v) = kv.parsed("head.maps_per_class")? {
        spec.maps_per_class = v;
    }
    if let Some(v) = kv.parsed::<Pooling>("head.pooling")? {
        spec.pooling = v;
    }
    if let Some(v) = kv.parsed("head.alpha")? {
        spec.alpha = v;
    }
    spec.validate()?;
    Ok(spec)
}

fn push_tensor(ck: &mut Checkpoint, name: String, t: &Tensor4<f32>) {
    ck.push(name, t.dims().to_vec(), t.data().to_vec());
}

fn restore(ck: &Checkpoint, name: &str, target: &mut Tensor4<f32>, path: &Path) -> Result<()> {
    let t = ck.get(name).ok_or_else(|| format_err(path, format!("missing tensor '{name}'")))?;
    if t.dims != target.dims() {
        return Err(format_err(
            path,
            format!("tensor '{name}' has dims {:?}, config implies {:?}", t.dims, target.dims()),
        ));
    }
    target.data_mut().copy_from_slice(&t.data);
    Ok(())
}

fn restore_vec(ck: &Checkpoint, name: &str, target: &mut [f32], path: &Path) -> Result<()> {
    let t = ck.get(name).ok_or_else(|| format_err(path, format!("missing tensor '{name}'")))?;
    if t.dims != [target.len()] {
        return Err(format_err(path, format!("tensor '{name}' has dims {:?}, expected [{}]", t.dims, target.len())));
    }
    target.copy_from_slice(&t.data);
    Ok(())
}

impl Model {
    pub fn new(backbone: &BackboneConfig, head: HeadSpec, class_names: Vec<String>, mean_pixel: Vec<f64>, seed: u64) -> Result<Self> {
        if class_names.len() != head.num_classes {
            return Err(config_err(format!("{} class names for {} head classes", class_names.len(), head.num_classes)));
        }
        if mean_pixel.len() != backbone.in_channels {
            return Err(config_err(format!("{} mean values for {} input channels", mean_pixel.len(), backbone.in_channels)));
        }
        Ok(Self {
            net: WslNet::new(backbone, head, seed)?,
            class_names,
            mean_pixel,
            epochs_completed: 0,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn header(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("format", "wsloc-model");
        kv.set("classes", self.class_names.join(","));
        kv.set("mean_pixel", join_list(&self.mean_pixel));
        kv.set("epochs_completed", self.epochs_completed);
        backbone_to_kv(&self.net.backbone.config, &mut kv);
        head_to_kv(&self.net.head.spec, &mut kv);
        kv
    }

    /// Values, momentum buffers and normalization statistics.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint {
            config: self.header().to_text(),
            tensors: Vec::new(),
        };
        for p in self.net.params() {
            push_tensor(&mut ck, p.name.clone(), &p.value);
        }
        for p in self.net.params() {
            push_tensor(&mut ck, format!("{}.momentum", p.name), &p.momentum_buffer);
        }
        for (i, b) in self.net.backbone.blocks.iter().enumerate() {
            ck.push(format!("backbone.block{i}.bn.running_mean"), vec![b.running.mean.len()], b.running.mean.clone());
            ck.push(format!("backbone.block{i}.bn.running_var"), vec![b.running.var.len()], b.running.var.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, path: &Path) -> Result<Self> {
        let kv = KeyValues::parse(&ck.config, path)?;
        if kv.get("format") != Some("wsloc-model") {
            return Err(format_err(path, "checkpoint header lacks format=wsloc-model"));
        }
        let class_names: Vec<String> = parse_list(kv.require("classes")?, "classes")?;
        let mean_pixel = parse_list(kv.require("mean_pixel")?, "mean_pixel")?;
        let backbone = backbone_from_kv(&kv, &BackboneConfig::desk())?;
        let head = head_from_kv(&kv, class_names.len())?;
        let mut model = Self::new(&backbone, head, class_names, mean_pixel, 0)?;
        model.epochs_completed = kv.require_parsed("epochs_completed")?;
        for p in model.net.params_mut() {
            let ParamTensor { name, value, momentum_buffer, .. } = p;
            restore(ck, name, value, path)?;
            restore(ck, &format!("{name}.momentum"), momentum_buffer, path)?;
        }
        for (i, b) in model.net.backbone.blocks.iter_mut().enumerate() {
            restore_vec(ck, &format!("backbone.block{i}.bn.running_mean"), &mut b.running.mean, path)?;
            restore_vec(ck, &format!("backbone.block{i}.bn.running_var"), &mut b.running.var, path)?;
        }
        let expected = 2 * model.net.params().count() + 2 * model.net.backbone.blocks.len();
        if ck.tensors.len() != expected {
            return Err(format_err(path, format!("{} tensors, expected {expected}", ck.tensors.len())));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, path)
    }

    /// Largest absolute parameter difference to `other` (same architecture).
    pub fn max_param_diff(&self, other: &Model) -> f64 {
        self.net
            .params()
            .zip(other.net.params())
            .flat_map(|(a, b)| a.value.data().iter().zip(b.value.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()))
            .fold(0.0, f64::max)
    }
}
