//! Weak-supervision head: a 1x1 convolution producing `M` maps per class,
//! class-wise averaging into one localization map per class, and spatial
//! pooling of each map into a single class score.

use std::hash::Hasher;

use crate::error::{config_err, Result};
use crate::nn::{he_normal, Backbone, BackboneCache, BackboneConfig, ParamGroup, ParamTensor};
use crate::tensor::{conv2d_backward, conv2d_forward, spatial_extrema, ConvSpec, Extrema, Mode, Scalar, Tensor4};

/// Spatial pooling of a localization map into a class score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pooling {
    /// Extended spatial pooling: `max + alpha * min`.
    Esp,
    /// Plain max pooling.
    Msp,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Esp => "esp",
            Pooling::Msp => "msp",
        }
    }
}

impl std::str::FromStr for Pooling {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "esp" => Ok(Pooling::Esp),
            "msp" => Ok(Pooling::Msp),
            other => Err(config_err(format!("unknown pooling '{other}' (expected esp or msp)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadSpec {
    pub num_classes: usize,
    pub maps_per_class: usize,
    pub pooling: Pooling,
    pub alpha: f64,
}

impl HeadSpec {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            maps_per_class: 4,
            pooling: Pooling::Esp,
            alpha: 0.6,
        }
    }

    /// Weight on the minimum; zero under max pooling.
    pub fn effective_alpha(&self) -> f64 {
        match self.pooling {
            Pooling::Esp => self.alpha,
            Pooling::Msp => 0.0,
        }
    }

    pub fn filters(&self) -> usize {
        self.num_classes * self.maps_per_class
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.maps_per_class == 0 {
            return Err(config_err(format!(
                "head needs at least one class and one map per class: {self:?}"
            )));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(config_err(format!("pooling alpha must be finite and >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Raw (pre-sigmoid) per-class heatmaps, `(batch, C, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationMaps<T: Scalar = f32> {
    pub maps: Tensor4<T>,
}

/// Pooled per-class scores (pre-sigmoid), one vector per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores<T = f32> {
    pub scores: Vec<Vec<T>>,
}

/// Averages class-major groups of `maps_per_class` channels.
pub fn multimap_average<T: Scalar>(
    stacked: &Tensor4<T>,
    num_classes: usize,
    maps_per_class: usize,
) -> Result<Tensor4<T>> {
    if num_classes == 0 || maps_per_class == 0 || stacked.channels() != num_classes * maps_per_class {
        return Err(config_err(format!(
            "{} channels cannot be split into {num_classes} groups of {maps_per_class}",
            stacked.channels()
        )));
    }
    let [n, _, h, w] = stacked.dims();
    let mut out = Tensor4::zeros([n, num_classes, h, w]);
    let inv = T::of_f64(1.0 / maps_per_class as f64);
    for s in 0..n {
        for c in 0..num_classes {
            let dst = out.plane_mut(s, c);
            for m in 0..maps_per_class {
                for (d, &v) in dst.iter_mut().zip(stacked.plane(s, c * maps_per_class + m)) {
                    *d = *d + v;
                }
            }
            if maps_per_class > 1 {
                dst.iter_mut().for_each(|d| *d = *d * inv);
            }
        }
    }
    Ok(out)
}

/// Score of one map plus the extrema that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pooled<T> {
    pub score: T,
    pub extrema: Extrema<T>,
}

/// `max(z) + alpha * min(z)` for ESP, `max(z)` for MSP.
pub fn spatial_pool<T: Scalar>(map: &[T], height: usize, width: usize, spec: &HeadSpec) -> Result<Pooled<T>> {
    let extrema = spatial_extrema(map, height, width)?;
    let alpha = spec.effective_alpha();
    let score = if alpha == 0.0 {
        extrema.max
    } else {
        extrema.max + T::of_f64(alpha) * extrema.min
    };
    Ok(Pooled { score, extrema })
}

/// Routes `grad` back to the argmax site and `alpha * grad` to the argmin site.
pub fn spatial_pool_backward<T: Scalar>(pooled: &Pooled<T>, grad: T, width: usize, spec: &HeadSpec, grad_map: &mut [T]) {
    let imax = pooled.extrema.argmax_index(width);
    grad_map[imax] = grad_map[imax] + grad;
    let alpha = spec.effective_alpha();
    if alpha != 0.0 {
        let imin = pooled.extrema.argmin_index(width);
        grad_map[imin] = grad_map[imin] + T::of_f64(alpha) * grad;
    }
}

/// Parameters of the 1x1 localization convolution.
#[derive(Debug, Clone)]
pub struct Head<T: Scalar = f32> {
    pub spec: HeadSpec,
    pub in_channels: usize,
    pub weight: ParamTensor<T>,
    pub bias: ParamTensor<T>,
}

/// Saved values of a head forward pass.
#[derive(Debug, Clone)]
pub struct HeadCache<T: Scalar> {
    features: Tensor4<T>,
    pooled: Vec<Vec<Pooled<T>>>,
    map_hw: (usize, usize),
}

impl<T: Scalar> Head<T> {
    pub fn init(spec: HeadSpec, in_channels: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        let conv = Self::conv_spec_for(&spec, in_channels);
        conv.validate()?;
        Ok(Self {
            spec,
            in_channels,
            weight: ParamTensor::new("head.conv.weight", ParamGroup::Head, he_normal(conv.weight_dims(), seed, 1 << 32)),
            bias: ParamTensor::vector("head.conv.bias", ParamGroup::Head, vec![T::zero(); spec.filters()]),
        })
    }

    fn conv_spec_for(spec: &HeadSpec, in_channels: usize) -> ConvSpec {
        ConvSpec::new(in_channels, spec.filters(), 1, 1)
    }

    pub fn conv_spec(&self) -> ConvSpec {
        Self::conv_spec_for(&self.spec, self.in_channels)
    }

    pub fn params(&self) -> impl Iterator<Item = &ParamTensor<T>> {
        [&self.weight, &self.bias].into_iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor<T>> {
        [&mut self.weight, &mut self.bias].into_iter()
    }
}

/// 1x1 conv, class-wise averaging, then pooling of every map.
pub fn head_forward<T: Scalar>(
    features: &Tensor4<T>,
    head: &Head<T>,
) -> Result<(LocalizationMaps<T>, ClassScores<T>, HeadCache<T>)> {
    if features.channels() != head.in_channels {
        return Err(config_err(format!(
            "head expects {} feature channels, got dims {:?}",
            head.in_channels,
            features.dims()
        )));
    }
    let spec = &head.spec;
    let stacked = conv2d_forward(features, &head.weight.value, Some(head.bias.value.data()), &head.conv_spec())?;
    let maps = multimap_average(&stacked, spec.num_classes, spec.maps_per_class)?;
    let [n, _, h, w] = maps.dims();
    let mut scores = Vec::with_capacity(n);
    let mut pooled = Vec::with_capacity(n);
    for s in 0..n {
        let per_class = (0..spec.num_classes)
            .map(|c| spatial_pool(maps.plane(s, c), h, w, spec))
            .collect::<Result<Vec<_>>>()?;
        scores.push(per_class.iter().map(|p| p.score).collect());
        pooled.push(per_class);
    }
    let cache = HeadCache {
        features: features.clone(),
        pooled,
        map_hw: (h, w),
    };
    Ok((LocalizationMaps { maps }, ClassScores { scores }, cache))
}

/// Accumulates head gradients; returns the gradient w.r.t. the features.
pub fn head_backward<T: Scalar>(head: &mut Head<T>, cache: &HeadCache<T>, grad_scores: &[Vec<T>]) -> Result<Tensor4<T>> {
    let spec = head.spec;
    let (h, w) = cache.map_hw;
    let n = cache.features.batch();
    if grad_scores.len() != n || grad_scores.iter().any(|g| g.len() != spec.num_classes) {
        return Err(config_err("head grad_scores shape does not match the forward pass"));
    }
    let mut d_stacked = Tensor4::zeros([n, spec.filters(), h, w]);
    let inv_m = T::of_f64(1.0 / spec.maps_per_class as f64);
    let mut d_map = vec![T::zero(); h * w];
    for s in 0..n {
        for c in 0..spec.num_classes {
            d_map.fill(T::zero());
            spatial_pool_backward(&cache.pooled[s][c], grad_scores[s][c], w, &spec, &mut d_map);
            for m in 0..spec.maps_per_class {
                let dst = d_stacked.plane_mut(s, c * spec.maps_per_class + m);
                for (d, &g) in dst.iter_mut().zip(&d_map) {
                    *d = g * inv_m;
                }
            }
        }
    }
    let grads = conv2d_backward(&cache.features, &head.weight.value, &head.conv_spec(), &d_stacked)?;
    head.weight.accumulate(grads.grad_weights.data());
    head.bias.accumulate(&grads.grad_bias);
    Ok(grads.grad_input)
}

/// Backbone plus localization head.
#[derive(Debug, Clone)]
pub struct WslNet<T: Scalar = f32> {
    pub backbone: Backbone<T>,
    pub head: Head<T>,
}

/// Output of [`WslNet::forward`]: one map tensor per input tensor, and
/// scores flattened over all samples in input order.
#[derive(Debug, Clone)]
pub struct NetOutput<T: Scalar> {
    pub maps: Vec<LocalizationMaps<T>>,
    pub scores: Vec<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct NetCache<T: Scalar> {
    backbone: BackboneCache<T>,
    heads: Vec<HeadCache<T>>,
}

impl<T: Scalar> NetCache<T> {
    /// Fingerprint of every non-smooth branch (ReLU masks, pooling sites).
    pub fn kink_signature(&self) -> u64 {
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        self.backbone.relu_pattern(&mut hasher);
        for hc in &self.heads {
            for per_sample in &hc.pooled {
                for p in per_sample {
                    hasher.write_usize(p.extrema.argmax.0);
                    hasher.write_usize(p.extrema.argmax.1);
                    hasher.write_usize(p.extrema.argmin.0);
                    hasher.write_usize(p.extrema.argmin.1);
                }
            }
        }
        hasher.finish()
    }
}

impl<T: Scalar> WslNet<T> {
    pub fn new(backbone: &BackboneConfig, head: HeadSpec, seed: u64) -> Result<Self> {
        let backbone = Backbone::init(backbone, seed)?;
        let head = Head::init(head, backbone.config.out_channels(), seed)?;
        Ok(Self { backbone, head })
    }

    pub fn num_classes(&self) -> usize {
        self.head.spec.num_classes
    }

    pub fn forward(&self, images: &[Tensor4<T>], mode: Mode) -> Result<(NetOutput<T>, NetCache<T>)> {
        let (features, bcache) = self.backbone.forward(images, mode)?;
        let mut maps = Vec::with_capacity(features.len());
        let mut scores = Vec::new();
        let mut heads = Vec::with_capacity(features.len());
        for f in &features {
            let (m, s, hc) = head_forward(f, &self.head)?;
            maps.push(m);
            scores.extend(s.scores);
            heads.push(hc);
        }
        Ok((NetOutput { maps, scores }, NetCache { backbone: bcache, heads }))
    }

    /// Backprop from per-sample score gradients; returns input-image gradients.
    pub fn backward(&mut self, cache: &NetCache<T>, grad_scores: &[Vec<T>]) -> Result<Vec<Tensor4<T>>> {
        let mut offset = 0;
        let mut d_features = Vec::with_capacity(cache.heads.len());
        for hc in &cache.heads {
            let n = hc.features.batch();
            let slice = grad_scores
                .get(offset..offset + n)
                .ok_or_else(|| config_err("fewer score gradients than samples"))?;
            d_features.push(head_backward(&mut self.head, hc, slice)?);
            offset += n;
        }
        if offset != grad_scores.len() {
            return Err(config_err("more score gradients than samples"));
        }
        self.backbone.backward(&cache.backbone, d_features)
    }

    pub fn update_running_stats(&mut self, cache: &NetCache<T>) {
        self.backbone.update_running_stats(&cache.backbone);
    }

    pub fn params(&self) -> impl Iterator<Item = &ParamTensor<T>> {
        self.backbone.params().chain(self.head.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor<T>> {
        self.backbone.params_mut().chain(self.head.params_mut())
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().for_each(|p| p.zero_grad());
    }

    pub fn cast<U: Scalar>(&self) -> WslNet<U> {
        WslNet {
            backbone: self.backbone.cast(),
            head: Head {
                spec: self.head.spec,
                in_channels: self.head.in_channels,
                weight: self.head.weight.cast(),
                bias: self.head.bias.cast(),
            },
        }
    }
}
