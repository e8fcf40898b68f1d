//! Central finite-difference checks of analytic gradients.
//!
//! Targets expose their parameters and inputs as flat `f64` slots. Each
//! probe also reports a fingerprint of the non-smooth branches it took
//! (ReLU masks, pooling argmax/argmin); a sample whose `+eps` and `-eps`
//! evaluations land on different branches straddles a kink and is skipped.

use std::hash::Hasher;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::objective::{wbce_loss, ClassWeights, PresenceLabel};
use crate::tensor::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, relu_backward,
    relu_forward, ConvSpec, Mode, RunningStats, Tensor4,
};
use crate::wslnet::{head_backward, head_forward, Head, WslNet};

/// Denominator floor for the relative error, so that entries whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Something with a scalar loss whose gradient can be checked numerically.
pub trait GradCheckable {
    fn num_params(&self) -> usize;
    fn num_inputs(&self) -> usize;
    fn param_mut(&mut self, index: usize) -> &mut f64;
    fn input_mut(&mut self, index: usize) -> &mut f64;
    /// Loss plus a fingerprint of the non-smooth branches taken.
    fn evaluate(&self) -> Result<(f64, u64)>;
    /// Analytic `(d loss / d params, d loss / d inputs)`.
    fn analytic(&mut self) -> Result<(Vec<f64>, Vec<f64>)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub params_checked: usize,
    pub inputs_checked: usize,
    pub skipped_at_kinks: usize,
    /// Slot with the largest error, e.g. `param 17`.
    pub worst: String,
}

#[derive(Clone, Copy)]
enum Slot {
    Param(usize),
    Input(usize),
}

fn slot_mut<G: GradCheckable>(target: &mut G, slot: Slot) -> &mut f64 {
    match slot {
        Slot::Param(i) => target.param_mut(i),
        Slot::Input(i) => target.input_mut(i),
    }
}

fn finite_loss(value: (f64, u64)) -> Result<(f64, u64)> {
    if value.0.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical(format!("grad check loss is {}", value.0)))
    }
}

/// Compares analytic and central-difference gradients on up to `samples`
/// random parameters and `samples` random inputs.
pub fn grad_check<G: GradCheckable>(target: &mut G, epsilon: f64, samples: usize, seed: u64) -> Result<GradCheckReport> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("grad check epsilon must be > 0, got {epsilon}")));
    }
    let (_, base_sig) = finite_loss(target.evaluate()?)?;
    let (grad_params, grad_inputs) = target.analytic()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        params_checked: 0,
        inputs_checked: 0,
        skipped_at_kinks: 0,
        worst: String::new(),
    };

    for (is_param, count) in [(true, target.num_params()), (false, target.num_inputs())] {
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut rng);
        let mut checked = 0;
        for i in order {
            if checked == samples {
                break;
            }
            let slot = if is_param { Slot::Param(i) } else { Slot::Input(i) };
            let original = *slot_mut(target, slot);
            *slot_mut(target, slot) = original + epsilon;
            let plus = finite_loss(target.evaluate()?);
            *slot_mut(target, slot) = original - epsilon;
            let minus = finite_loss(target.evaluate()?);
            *slot_mut(target, slot) = original;
            let ((lp, sp), (lm, sm)) = (plus?, minus?);
            if sp != base_sig || sm != base_sig {
                report.skipped_at_kinks += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * epsilon);
            let analytic = if is_param { grad_params[i] } else { grad_inputs[i] };
            let err = relative_error(analytic, numeric);
            if err > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = format!(
                    "{} {i}: analytic {analytic:e}, numeric {numeric:e}",
                    if is_param { "param" } else { "input" }
                );
            }
            checked += 1;
        }
        if is_param {
            report.params_checked = checked;
        } else {
            report.inputs_checked = checked;
        }
    }
    Ok(report)
}

fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn hash_mask(t: &Tensor4<f64>, hasher: &mut impl Hasher) {
    for v in t.data() {
        hasher.write_u8((*v > 0.0) as u8);
    }
}

/// Conv layer under the loss `<probe, conv(x)>`.
pub struct ConvProbe {
    pub spec: ConvSpec,
    pub input: Tensor4<f64>,
    pub weights: Tensor4<f64>,
    pub bias: Vec<f64>,
    pub probe: Tensor4<f64>,
}

impl GradCheckable for ConvProbe {
    fn num_params(&self) -> usize {
        self.weights.data().len() + self.bias.len()
    }
    fn num_inputs(&self) -> usize {
        self.input.data().len()
    }
    fn param_mut(&mut self, i: usize) -> &mut f64 {
        let nw = self.weights.data().len();
        if i < nw {
            &mut self.weights.data_mut()[i]
        } else {
            &mut self.bias[i - nw]
        }
    }
    fn input_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.input.data_mut()[i]
    }
    fn evaluate(&self) -> Result<(f64, u64)> {
        let y = conv2d_forward(&self.input, &self.weights, Some(&self.bias), &self.spec)?;
        Ok((dot(&y, &self.probe), 0))
    }
    fn analytic(&mut self) -> Result<(Vec<f64>, Vec<f64>)> {
        let g = conv2d_backward(&self.input, &self.weights, &self.spec, &self.probe)?;
        let mut p = g.grad_weights.into_vec();
        p.extend(g.grad_bias);
        Ok((p, g.grad_input.into_vec()))
    }
}

/// ReLU under `<probe, relu(x)>`; no parameters.
pub struct ReluProbe {
    pub input: Tensor4<f64>,
    pub probe: Tensor4<f64>,
}

impl GradCheckable for ReluProbe {
    fn num_params(&self) -> usize {
        0
    }
    fn num_inputs(&self) -> usize {
        self.input.data().len()
    }
    fn param_mut(&mut self, _: usize) -> &mut f64 {
        unreachable!("relu has no parameters")
    }
    fn input_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.input.data_mut()[i]
    }
    fn evaluate(&self) -> Result<(f64, u64)> {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        hash_mask(&self.input, &mut h);
        Ok((dot(&relu_forward(&self.input), &self.probe), h.finish()))
    }
    fn analytic(&mut self) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((Vec::new(), relu_backward(&self.input, &self.probe)?.into_vec()))
    }
}

/// Train-mode batch norm under `<probe, bn(x)>`.
pub struct BatchNormProbe {
    pub inputs: Vec<Tensor4<f64>>,
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub probes: Vec<Tensor4<f64>>,
    pub mode: Mode,
    pub running: RunningStats<f64>,
}

impl BatchNormProbe {
    fn locate(&self, mut i: usize) -> (usize, usize) {
        for (t, x) in self.inputs.iter().enumerate() {
            if i < x.data().len() {
                return (t, i);
            }
            i -= x.data().len();
        }
        panic!("input index out of range");
    }
}

impl GradCheckable for BatchNormProbe {
    fn num_params(&self) -> usize {
        self.scale.len() * 2
    }
    fn num_inputs(&self) -> usize {
        self.inputs.iter().map(|t| t.data().len()).sum()
    }
    fn param_mut(&mut self, i: usize) -> &mut f64 {
        let c = self.scale.len();
        if i < c {
            &mut self.scale[i]
        } else {
            &mut self.shift[i - c]
        }
    }
    fn input_mut(&mut self, i: usize) -> &mut f64 {
        let (t, j) = self.locate(i);
        &mut self.inputs[t].data_mut()[j]
    }
    fn evaluate(&self) -> Result<(f64, u64)> {
        let (ys, _) = batchnorm_forward(&self.inputs, &self.scale, &self.shift, &self.running, self.mode, 1e-5)?;
        Ok((ys.iter().zip(&self.probes).map(|(y, p)| dot(y, p)).sum(), 0))
    }
    fn analytic(&mut self) -> Result<(Vec<f64>, Vec<f64>)> {
        let (_, cache) = batchnorm_forward(&self.inputs, &self.scale, &self.shift, &self.running, self.mode, 1e-5)?;
        let g = batchnorm_backward(&cache, &self.scale, &self.probes)?;
        let mut p = g.grad_scale;
        p.extend(g.grad_shift);
        Ok((p, g.grad_input.into_iter().flat_map(|t| t.into_vec()).collect()))
    }
}

/// Localization head (1x1 conv, multi-map average, pooling) under
/// `sum_c probe_c * score_c`.
pub struct HeadProbe {
    pub head: Head<f64>,
    pub features: Tensor4<f64>,
    pub probe: Vec<Vec<f64>>,
}

impl GradCheckable for HeadProbe {
    fn num_params(&self) -> usize {
        self.head.weight.len() + self.head.bias.len()
    }
    fn num_inputs(&self) -> usize {
        self.features.data().len()
    }
    fn param_mut(&mut self, i: usize) -> &mut f64 {
        let nw = self.head.weight.len();
        if i < nw {
            &mut self.head.weight.value.data_mut()[i]
        } else {
            &mut self.head.bias.value.data_mut()[i - nw]
        }
    }
    fn input_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.features.data_mut()[i]
    }
    fn evaluate(&self) -> Result<(f64, u64)> {
        let (maps, scores, _) = head_forward(&self.features, &self.head)?;
        let loss = scores
            .scores
            .iter()
            .flatten()
            .zip(self.probe.iter().flatten())
            .map(|(s, p)| s * p)
            .sum();
        let mut h = std::collections::hash_map::DefaultHasher::new();
        let [n, c, hh, ww] = maps.maps.dims();
        for s in 0..n {
            for k in 0..c {
                let e = crate::tensor::spatial_extrema(maps.maps.plane(s, k), hh, ww)?;
                h.write_usize(e.argmax_index(ww));
                h.write_usize(e.argmin_index(ww));
            }
        }
        Ok((loss, h.finish()))
    }
    fn analytic(&mut self) -> Result<(Vec<f64>, Vec<f64>)> {
        let (_, _, cache) = head_forward(&self.features, &self.head)?;
        self.head.weight.zero_grad();
        self.head.bias.zero_grad();
        let d = head_backward(&mut self.head, &cache, &self.probe)?;
        let mut p = self.head.weight.grad.data().to_vec();
        p.extend_from_slice(self.head.bias.grad.data());
        Ok((p, d.into_vec()))
    }
}

/// Whole network with train-mode batch norm, scored by the weighted BCE loss.
pub struct NetworkProbe {
    pub net: WslNet<f64>,
    pub images: Vec<Tensor4<f64>>,
    pub labels: Vec<PresenceLabel>,
    pub weights: ClassWeights,
}

impl NetworkProbe {
    fn param_offsets(&self) -> Vec<usize> {
        self.net.params().map(|p| p.len()).collect()
    }
}

impl GradCheckable for NetworkProbe {
    fn num_params(&self) -> usize {
        self.net.params().map(|p| p.len()).sum()
    }
    fn num_inputs(&self) -> usize {
        self.images.iter().map(|t| t.data().len()).sum()
    }
    fn param_mut(&mut self, mut i: usize) -> &mut f64 {
        let lens = self.param_offsets();
        for (p, len) in self.net.params_mut().zip(lens) {
            if i < len {
                return &mut p.value.data_mut()[i];
            }
            i -= len;
        }
        panic!("param index out of range");
    }
    fn input_mut(&mut self, mut i: usize) -> &mut f64 {
        for t in &mut self.images {
            let len = t.data().len();
            if i < len {
                return &mut t.data_mut()[i];
            }
            i -= len;
        }
        panic!("input index out of range");
    }
    fn evaluate(&self) -> Result<(f64, u64)> {
        let (out, cache) = self.net.forward(&self.images, Mode::Train)?;
        let (loss, _) = wbce_loss(&out.scores, &self.labels, &self.weights)?;
        Ok((loss, cache.kink_signature()))
    }
    fn analytic(&mut self) -> Result<(Vec<f64>, Vec<f64>)> {
        let (out, cache) = self.net.forward(&self.images, Mode::Train)?;
        let (_, d_scores) = wbce_loss(&out.scores, &self.labels, &self.weights)?;
        self.net.zero_grad();
        let d_images = self.net.backward(&cache, &d_scores)?;
        let p = self.net.params().flat_map(|p| p.grad.data().to_vec()).collect();
        Ok((p, d_images.into_iter().flat_map(|t| t.into_vec()).collect()))
    }
}
