use super::{Scalar, Tensor4};
use crate::error::{config_err, Result};

pub fn relu_forward<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `grad_out` through where `input > 0`, zero elsewhere.
pub fn relu_backward<T: Scalar>(input: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    if input.dims() != grad_out.dims() {
        return Err(config_err(format!(
            "relu grad_out dims {:?} differ from input dims {:?}",
            grad_out.dims(),
            input.dims()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::from_vec(input.dims(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; caller folds them into the running stats.
    Train,
    /// Running statistics, no state change.
    Eval,
}

/// Per-channel running mean and (unbiased) variance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn update(&mut self, cache: &BatchNormCache<T>, momentum: f64) {
        if cache.mode != Mode::Train {
            return;
        }
        for c in 0..self.mean.len() {
            let m = (1.0 - momentum) * self.mean[c].as_f64() + momentum * cache.batch_mean[c];
            let v = (1.0 - momentum) * self.var[c].as_f64() + momentum * cache.batch_var_unbiased[c];
            self.mean[c] = T::of_f64(m);
            self.var[c] = T::of_f64(v);
        }
    }
}

/// Values saved by [`batchnorm_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T: Scalar> {
    pub mode: Mode,
    xhat: Vec<Tensor4<T>>,
    inv_std: Vec<T>,
    pub batch_mean: Vec<f64>,
    pub batch_var_unbiased: Vec<f64>,
    count: usize,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T: Scalar> {
    pub grad_input: Vec<Tensor4<T>>,
    pub grad_scale: Vec<T>,
    pub grad_shift: Vec<T>,
}

/// Batch normalization over a group of tensors that share a channel count.
///
/// The group may mix spatial sizes (e.g. rotated and unrotated images);
/// train-mode statistics are taken over every pixel of every member.
pub fn batchnorm_forward<T: Scalar>(
    inputs: &[Tensor4<T>],
    scale: &[T],
    shift: &[T],
    running: &RunningStats<T>,
    mode: Mode,
    epsilon: T,
) -> Result<(Vec<Tensor4<T>>, BatchNormCache<T>)> {
    let channels = scale.len();
    if shift.len() != channels || running.channels() != channels {
        return Err(config_err(format!(
            "batchnorm parameter lengths disagree: scale {}, shift {}, running {}",
            channels,
            shift.len(),
            running.channels()
        )));
    }
    if epsilon <= T::zero() {
        return Err(config_err("batchnorm epsilon must be positive"));
    }
    for t in inputs {
        if t.channels() != channels {
            return Err(config_err(format!(
                "batchnorm input dims {:?} do not have {channels} channels",
                t.dims()
            )));
        }
    }
    let count: usize = inputs.iter().map(|t| t.batch() * t.plane_len()).sum();
    if count == 0 {
        return Err(config_err("batchnorm needs at least one element per channel"));
    }

    let (mean, var_biased, var_unbiased) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0f64; channels];
            let mut var = vec![0.0f64; channels];
            for t in inputs {
                for n in 0..t.batch() {
                    for (c, m) in mean.iter_mut().enumerate() {
                        *m += t.plane(n, c).iter().map(|v| v.as_f64()).sum::<f64>();
                    }
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            for t in inputs {
                for n in 0..t.batch() {
                    for (c, v) in var.iter_mut().enumerate() {
                        let mu = mean[c];
                        *v += t
                            .plane(n, c)
                            .iter()
                            .map(|x| {
                                let d = x.as_f64() - mu;
                                d * d
                            })
                            .sum::<f64>();
                    }
                }
            }
            let unbiased: Vec<f64> = var
                .iter()
                .map(|v| if count > 1 { v / (count - 1) as f64 } else { 0.0 })
                .collect();
            let biased = var.iter().map(|v| v / count as f64).collect();
            (mean, biased, unbiased)
        }
        Mode::Eval => (
            running.mean.iter().map(|v| v.as_f64()).collect(),
            running.var.iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
            Vec::new(),
        ),
    };

    let eps = epsilon.as_f64();
    let inv_std: Vec<T> = var_biased.iter().map(|v| T::of_f64(1.0 / (v + eps).sqrt())).collect();
    let mean_t: Vec<T> = mean.iter().map(|&m| T::of_f64(m)).collect();

    let mut outputs = Vec::with_capacity(inputs.len());
    let mut xhats = Vec::with_capacity(inputs.len());
    for t in inputs {
        let mut xhat = t.clone();
        let mut y = Tensor4::zeros(t.dims());
        for n in 0..t.batch() {
            for c in 0..channels {
                let (mu, is, g, b) = (mean_t[c], inv_std[c], scale[c], shift[c]);
                for (xh, yo) in xhat.plane_mut(n, c).iter_mut().zip(y.plane_mut(n, c).iter_mut()) {
                    *xh = (*xh - mu) * is;
                    *yo = g * *xh + b;
                }
            }
        }
        outputs.push(y);
        xhats.push(xhat);
    }
    let cache = BatchNormCache {
        mode,
        xhat: xhats,
        inv_std,
        batch_mean: if mode == Mode::Train { mean } else { Vec::new() },
        batch_var_unbiased: var_unbiased,
        count,
    };
    Ok((outputs, cache))
}

pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    scale: &[T],
    grad_out: &[Tensor4<T>],
) -> Result<BatchNormGrads<T>> {
    let channels = scale.len();
    if grad_out.len() != cache.xhat.len()
        || grad_out.iter().zip(&cache.xhat).any(|(g, x)| g.dims() != x.dims())
    {
        return Err(config_err("batchnorm grad_out does not match the forward inputs"));
    }
    let mut sum_dy = vec![0.0f64; channels];
    let mut sum_dy_xhat = vec![0.0f64; channels];
    for (g, xh) in grad_out.iter().zip(&cache.xhat) {
        for n in 0..g.batch() {
            for c in 0..channels {
                for (&d, &x) in g.plane(n, c).iter().zip(xh.plane(n, c)) {
                    sum_dy[c] += d.as_f64();
                    sum_dy_xhat[c] += d.as_f64() * x.as_f64();
                }
            }
        }
    }
    let m = cache.count as f64;
    let mut grad_input = Vec::with_capacity(grad_out.len());
    for (g, xh) in grad_out.iter().zip(&cache.xhat) {
        let mut dx = Tensor4::zeros(g.dims());
        for n in 0..g.batch() {
            for c in 0..channels {
                let k = scale[c] * cache.inv_std[c];
                let dst = dx.plane_mut(n, c);
                match cache.mode {
                    Mode::Train => {
                        let mean_dy = T::of_f64(sum_dy[c] / m);
                        let mean_dyx = T::of_f64(sum_dy_xhat[c] / m);
                        for ((o, &d), &x) in dst.iter_mut().zip(g.plane(n, c)).zip(xh.plane(n, c)) {
                            *o = k * (d - mean_dy - x * mean_dyx);
                        }
                    }
                    Mode::Eval => {
                        for (o, &d) in dst.iter_mut().zip(g.plane(n, c)) {
                            *o = k * d;
                        }
                    }
                }
            }
        }
        grad_input.push(dx);
    }
    Ok(BatchNormGrads {
        grad_input,
        grad_scale: sum_dy_xhat.into_iter().map(T::of_f64).collect(),
        grad_shift: sum_dy.into_iter().map(T::of_f64).collect(),
    })
}
