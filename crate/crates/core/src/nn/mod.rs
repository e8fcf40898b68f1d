//! Trainable parameters, the configurable convolutional backbone, the
//! checkpoint container and the finite-difference gradient checker.

pub mod checkpoint;
pub mod gradcheck;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{config_err, Result};
use crate::tensor::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, relu_backward,
    relu_forward, BatchNormCache, ConvSpec, Mode, RunningStats, Scalar, Tensor4,
};

/// Which learning-rate group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Backbone,
    Head,
}

/// A trainable tensor with its gradient accumulator and momentum state.
#[derive(Debug, Clone)]
pub struct ParamTensor<T: Scalar = f32> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor4<T>,
    pub grad: Tensor4<T>,
    pub momentum_buffer: Tensor4<T>,
}

impl<T: Scalar> ParamTensor<T> {
    pub fn new(name: impl Into<String>, group: ParamGroup, value: Tensor4<T>) -> Self {
        let dims = value.dims();
        Self {
            name: name.into(),
            group,
            value,
            grad: Tensor4::zeros(dims),
            momentum_buffer: Tensor4::zeros(dims),
        }
    }

    /// 1-D parameter stored as `[len, 1, 1, 1]`.
    pub fn vector(name: impl Into<String>, group: ParamGroup, values: Vec<T>) -> Self {
        let len = values.len();
        Self::new(name, group, Tensor4::from_vec([len, 1, 1, 1], values).expect("vector dims"))
    }

    pub fn len(&self) -> usize {
        self.value.data().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(T::zero());
    }

    pub fn accumulate(&mut self, grad: &[T]) {
        assert_eq!(grad.len(), self.len(), "gradient length for {}", self.name);
        for (g, &d) in self.grad.data_mut().iter_mut().zip(grad) {
            *g = *g + d;
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamTensor<U> {
        ParamTensor {
            name: self.name.clone(),
            group: self.group,
            value: self.value.cast(),
            grad: self.grad.cast(),
            momentum_buffer: self.momentum_buffer.cast(),
        }
    }
}

/// One resolution stage of the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageConfig {
    pub out_channels: usize,
    pub num_blocks: usize,
    /// Stride of the first block; later blocks use stride 1.
    pub stride: usize,
}

/// A single conv-norm-relu block after stage expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub conv: ConvSpec,
    /// Adds the block input to its output; needs identical shapes.
    pub residual: bool,
}

/// Layout of the fully convolutional backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub kernel: usize,
    pub stages: Vec<StageConfig>,
    /// Identity skips on every block whose input and output shapes match.
    pub residual: bool,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl BackboneConfig {
    /// Small 4-stage network with global stride 8, trainable on a CPU.
    pub fn desk() -> Self {
        Self::from_stages(&[(16, 1, 2), (32, 1, 2), (64, 1, 2), (64, 1, 1)])
    }

    /// ResNet18-like layout: a stride-2 stem, a stride-2 stand-in for the
    /// stem max-pool, then four banks of two blocks whose last two banks run
    /// at stride 1 (global stride 8 instead of 32).
    pub fn paper_scale() -> Self {
        Self::from_stages(&[
            (64, 1, 2),
            (64, 1, 2),
            (64, 2, 1),
            (128, 2, 2),
            (256, 2, 1),
            (512, 2, 1),
        ])
    }

    pub fn from_stages(stages: &[(usize, usize, usize)]) -> Self {
        Self {
            in_channels: 3,
            kernel: 3,
            stages: stages
                .iter()
                .map(|&(out_channels, num_blocks, stride)| StageConfig {
                    out_channels,
                    num_blocks,
                    stride,
                })
                .collect(),
            residual: true,
            bn_momentum: 0.1,
            bn_epsilon: 1e-5,
        }
    }

    /// Copy with the strides of the last `count` stages replaced.
    pub fn with_tail_strides(&self, count: usize, stride: usize) -> Self {
        let mut cfg = self.clone();
        let n = cfg.stages.len();
        for s in &mut cfg.stages[n.saturating_sub(count)..] {
            s.stride = stride;
        }
        cfg
    }

    /// Copy with every stage's channel count divided by `factor` (min 1).
    pub fn narrowed(&self, factor: usize) -> Self {
        let mut cfg = self.clone();
        for s in &mut cfg.stages {
            s.out_channels = (s.out_channels / factor).max(1);
        }
        cfg
    }

    pub fn global_stride(&self) -> usize {
        self.stages.iter().map(|s| s.stride).product()
    }

    pub fn out_channels(&self) -> usize {
        self.stages.last().map_or(self.in_channels, |s| s.out_channels)
    }

    /// Feature-map size for an `h x w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        self.blocks()
            .iter()
            .fold((h, w), |(h, w), b| b.conv.output_hw(h, w))
    }

    pub fn blocks(&self) -> Vec<BlockSpec> {
        let mut blocks = Vec::new();
        let mut cin = self.in_channels;
        for stage in &self.stages {
            for b in 0..stage.num_blocks {
                let stride = if b == 0 { stage.stride } else { 1 };
                let conv = ConvSpec::new(cin, stage.out_channels, self.kernel, stride);
                let residual = self.residual && stride == 1 && cin == stage.out_channels;
                blocks.push(BlockSpec { conv, residual });
                cin = stage.out_channels;
            }
        }
        blocks
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.kernel == 0 {
            return Err(config_err("backbone in_channels and kernel must be positive"));
        }
        if self.stages.is_empty() {
            return Err(config_err("backbone needs at least one stage"));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.out_channels == 0 || s.num_blocks == 0 || s.stride == 0 {
                return Err(config_err(format!("stage {i} has a zero field: {s:?}")));
            }
        }
        if !(self.bn_epsilon > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(config_err("batchnorm epsilon must be > 0 and momentum in [0, 1]"));
        }
        validate_blocks(&self.blocks())
    }
}

/// Rejects channel-discontinuous stacks and skips across shape changes.
pub fn validate_blocks(blocks: &[BlockSpec]) -> Result<()> {
    for (i, b) in blocks.iter().enumerate() {
        b.conv.validate()?;
        if i > 0 && blocks[i - 1].conv.out_channels != b.conv.in_channels {
            return Err(config_err(format!(
                "block {i} expects {} input channels but block {} produces {}",
                b.conv.in_channels,
                i - 1,
                blocks[i - 1].conv.out_channels
            )));
        }
        if b.residual && (b.conv.stride != 1 || b.conv.in_channels != b.conv.out_channels) {
            return Err(config_err(format!(
                "block {i} has a residual skip but changes shape ({} -> {} channels, stride {})",
                b.conv.in_channels, b.conv.out_channels, b.conv.stride
            )));
        }
    }
    Ok(())
}

/// He-normal draw: zero mean, variance `2 / fan_in`.
pub(crate) fn he_normal<T: Scalar>(dims: [usize; 4], seed: u64, stream: u64) -> Tensor4<T> {
    let fan_in = (dims[1] * dims[2] * dims[3]).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    Tensor4::from_fn(dims, |_| T::of_f64(normal.sample(&mut rng)))
}

#[derive(Debug, Clone)]
pub struct BlockParams<T: Scalar> {
    pub spec: BlockSpec,
    pub weight: ParamTensor<T>,
    pub bn_scale: ParamTensor<T>,
    pub bn_shift: ParamTensor<T>,
    pub running: RunningStats<T>,
}

/// Intermediate values of one block kept for backprop.
#[derive(Debug, Clone)]
struct BlockCache<T: Scalar> {
    input: Vec<Tensor4<T>>,
    conv_out: Vec<Tensor4<T>>,
    normed: Vec<Tensor4<T>>,
    bn: BatchNormCache<T>,
}

/// Saved activations of a backbone forward pass.
#[derive(Debug, Clone)]
pub struct BackboneCache<T: Scalar> {
    blocks: Vec<BlockCache<T>>,
}

impl<T: Scalar> BackboneCache<T> {
    /// Hash of every ReLU on/off decision, used to detect kink crossings.
    pub fn relu_pattern(&self, hasher: &mut impl std::hash::Hasher) {
        for b in &self.blocks {
            for t in &b.normed {
                for chunk in t.data().chunks(64) {
                    let mut bits = 0u64;
                    for (i, v) in chunk.iter().enumerate() {
                        if *v > T::zero() {
                            bits |= 1 << i;
                        }
                    }
                    hasher.write_u64(bits);
                }
            }
        }
    }
}

/// The backbone with its parameters and normalization statistics.
#[derive(Debug, Clone)]
pub struct Backbone<T: Scalar = f32> {
    pub config: BackboneConfig,
    pub blocks: Vec<BlockParams<T>>,
}

/// Fresh backbone parameters, fully determined by `seed`.
pub fn init_params<T: Scalar>(config: &BackboneConfig, seed: u64) -> Result<Backbone<T>> {
    Backbone::init(config, seed)
}

impl<T: Scalar> Backbone<T> {
    pub fn init(config: &BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let blocks = config
            .blocks()
            .into_iter()
            .enumerate()
            .map(|(i, spec)| {
                let c = spec.conv.out_channels;
                BlockParams {
                    spec,
                    weight: ParamTensor::new(
                        format!("backbone.block{i}.conv.weight"),
                        ParamGroup::Backbone,
                        he_normal(spec.conv.weight_dims(), seed, i as u64),
                    ),
                    bn_scale: ParamTensor::vector(
                        format!("backbone.block{i}.bn.scale"),
                        ParamGroup::Backbone,
                        vec![T::one(); c],
                    ),
                    bn_shift: ParamTensor::vector(
                        format!("backbone.block{i}.bn.shift"),
                        ParamGroup::Backbone,
                        vec![T::zero(); c],
                    ),
                    running: RunningStats::new(c),
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            blocks,
        })
    }

    /// Runs every block over a group of images.
    ///
    /// In [`Mode::Train`] batch-norm statistics are pooled over the whole
    /// group; the running statistics are left untouched (see
    /// [`Backbone::update_running_stats`]).
    pub fn forward(&self, inputs: &[Tensor4<T>], mode: Mode) -> Result<(Vec<Tensor4<T>>, BackboneCache<T>)> {
        if inputs.is_empty() {
            return Err(config_err("backbone forward on an empty batch"));
        }
        for x in inputs {
            if x.channels() != self.config.in_channels {
                return Err(config_err(format!(
                    "backbone expects {} input channels, got dims {:?}",
                    self.config.in_channels,
                    x.dims()
                )));
            }
        }
        let eps = T::of_f64(self.config.bn_epsilon);
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut x: Vec<Tensor4<T>> = inputs.to_vec();
        for block in &self.blocks {
            let conv_out = x
                .iter()
                .map(|xi| conv2d_forward(xi, &block.weight.value, None, &block.spec.conv))
                .collect::<Result<Vec<_>>>()?;
            let (normed, bn) = batchnorm_forward(
                &conv_out,
                block.bn_scale.value.data(),
                block.bn_shift.value.data(),
                &block.running,
                mode,
                eps,
            )?;
            let mut out: Vec<Tensor4<T>> = normed.iter().map(relu_forward).collect();
            if block.spec.residual {
                for (o, xi) in out.iter_mut().zip(&x) {
                    o.add_assign(xi);
                }
            }
            caches.push(BlockCache {
                input: std::mem::replace(&mut x, Vec::new()),
                conv_out,
                normed,
                bn,
            });
            x = out;
        }
        Ok((x, BackboneCache { blocks: caches }))
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the inputs.
    pub fn backward(&mut self, cache: &BackboneCache<T>, grad_out: Vec<Tensor4<T>>) -> Result<Vec<Tensor4<T>>> {
        if cache.blocks.len() != self.blocks.len() {
            return Err(config_err("backbone cache does not match the network"));
        }
        let mut grad = grad_out;
        for (block, bc) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            let d_normed = bc
                .normed
                .iter()
                .zip(&grad)
                .map(|(y, g)| relu_backward(y, g))
                .collect::<Result<Vec<_>>>()?;
            let bn_grads = batchnorm_backward(&bc.bn, block.bn_scale.value.data(), &d_normed)?;
            block.bn_scale.accumulate(&bn_grads.grad_scale);
            block.bn_shift.accumulate(&bn_grads.grad_shift);
            let mut d_input = Vec::with_capacity(grad.len());
            for ((xi, dz), skip) in bc.input.iter().zip(&bn_grads.grad_input).zip(&grad) {
                let g = conv2d_backward(xi, &block.weight.value, &block.spec.conv, dz)?;
                block.weight.accumulate(g.grad_weights.data());
                let mut dx = g.grad_input;
                if block.spec.residual {
                    dx.add_assign(skip);
                }
                d_input.push(dx);
            }
            debug_assert_eq!(bc.conv_out.len(), d_input.len());
            grad = d_input;
        }
        Ok(grad)
    }

    pub fn update_running_stats(&mut self, cache: &BackboneCache<T>) {
        let momentum = self.config.bn_momentum;
        for (block, bc) in self.blocks.iter_mut().zip(&cache.blocks) {
            block.running.update(&bc.bn, momentum);
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &ParamTensor<T>> {
        self.blocks
            .iter()
            .flat_map(|b| [&b.weight, &b.bn_scale, &b.bn_shift])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor<T>> {
        self.blocks
            .iter_mut()
            .flat_map(|b| [&mut b.weight, &mut b.bn_scale, &mut b.bn_shift])
    }

    pub fn cast<U: Scalar>(&self) -> Backbone<U> {
        Backbone {
            config: self.config.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    spec: b.spec,
                    weight: b.weight.cast(),
                    bn_scale: b.bn_scale.cast(),
                    bn_shift: b.bn_shift.cast(),
                    running: RunningStats {
                        mean: b.running.mean.iter().map(|v| U::of_f64(v.as_f64())).collect(),
                        var: b.running.var.iter().map(|v| U::of_f64(v.as_f64())).collect(),
                    },
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_config_shapes() {
        let cfg = BackboneConfig::desk();
        assert_eq!(cfg.global_stride(), 8);
        assert_eq!(cfg.output_hw(96, 160), (12, 20));
        let net = Backbone::<f32>::init(&cfg, 0).unwrap();
        let x = Tensor4::zeros([1, 3, 96, 160]);
        let (y, _) = net.forward(&[x], Mode::Eval).unwrap();
        assert_eq!(y[0].dims(), [1, 64, 12, 20]);
    }

    #[test]
    fn only_shape_preserving_blocks_get_skips() {
        let blocks = BackboneConfig::desk().blocks();
        let flags: Vec<bool> = blocks.iter().map(|b| b.residual).collect();
        assert_eq!(flags, vec![false, false, false, true]);
        let paper = BackboneConfig::paper_scale().blocks();
        assert_eq!(paper.len(), 10);
        assert!(paper.iter().all(|b| !b.residual || b.conv.stride == 1));
    }

    #[test]
    fn mismatched_skip_rejected() {
        let bad = [BlockSpec {
            conv: ConvSpec::new(16, 32, 3, 1),
            residual: true,
        }];
        let err = validate_blocks(&bad).unwrap_err();
        assert!(err.to_string().contains("residual"));
        let strided = [BlockSpec {
            conv: ConvSpec::new(16, 16, 3, 2),
            residual: true,
        }];
        assert!(validate_blocks(&strided).is_err());
        let broken_chain = [
            BlockSpec { conv: ConvSpec::new(3, 8, 3, 1), residual: false },
            BlockSpec { conv: ConvSpec::new(4, 8, 3, 1), residual: false },
        ];
        assert!(validate_blocks(&broken_chain).is_err());
    }

    #[test]
    fn init_is_deterministic_and_normalized() {
        let cfg = BackboneConfig::desk();
        let a = Backbone::<f32>::init(&cfg, 9).unwrap();
        let b = Backbone::<f32>::init(&cfg, 9).unwrap();
        let c = Backbone::<f32>::init(&cfg, 10).unwrap();
        for ((pa, pb), pc) in a.params().zip(b.params()).zip(c.params()) {
            assert_eq!(pa.value.data(), pb.value.data());
            if pa.name.ends_with("weight") {
                assert_ne!(pa.value.data(), pc.value.data());
            }
        }
        for blk in &a.blocks {
            assert!(blk.bn_scale.value.data().iter().all(|&v| v == 1.0));
            assert!(blk.bn_shift.value.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_variance_tracks_fan_in() {
        // 3x3x64 -> 64 kernel, fan_in = 576
        let dims = [64, 64, 3, 3];
        let target = 2.0 / 576.0;
        for seed in 0..10 {
            let w = he_normal::<f64>(dims, seed, 0);
            let n = w.data().len() as f64;
            let mean = w.data().iter().sum::<f64>() / n;
            let var = w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!((var / target - 1.0).abs() < 0.2, "seed {seed}: var {var}");
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let net = Backbone::<f32>::init(&BackboneConfig::desk(), 0).unwrap();
        let x = Tensor4::zeros([1, 1, 8, 8]);
        assert!(net.forward(&[x], Mode::Eval).is_err());
    }

    #[test]
    fn zero_input_zero_weights_stay_finite() {
        let mut net = Backbone::<f64>::init(&BackboneConfig::desk(), 0).unwrap();
        for p in net.params_mut() {
            if p.name.ends_with("weight") {
                p.value.data_mut().fill(0.0);
            }
        }
        let x = Tensor4::zeros([2, 3, 16, 16]);
        let (y, cache) = net.forward(&[x], Mode::Train).unwrap();
        assert!(y[0].is_finite());
        let g = net.backward(&cache, vec![Tensor4::filled(y[0].dims(), 1.0)]).unwrap();
        assert!(g[0].is_finite());
        assert!(net.params().all(|p| p.grad.is_finite()));
    }

    #[test]
    fn measured_stride_matches_config() {
        use rand::{Rng, SeedableRng};
        let cfg = BackboneConfig::from_stages(&[(4, 1, 2), (4, 1, 2), (4, 1, 2), (4, 1, 1)]);
        let net = Backbone::<f32>::init(&cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let (h, w) = (rng.gen_range(1..70), rng.gen_range(1..70));
            let (y, _) = net.forward(&[Tensor4::zeros([1, 3, h, w])], Mode::Eval).unwrap();
            let s = cfg.global_stride();
            assert_eq!((y[0].height(), y[0].width()), (h.div_ceil(s), w.div_ceil(s)));
        }
    }
}
