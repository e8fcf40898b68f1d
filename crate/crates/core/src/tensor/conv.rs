use super::{gemm, MatRef, Scalar, Tensor4};
use crate::error::{config_err, Result};

/// Padding rule for [`ConvSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PaddingMode {
    /// Zero padding such that `out = ceil(in / stride)`; any odd padding
    /// pixel goes to the bottom/right edge.
    #[default]
    SameCeil,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: PaddingMode,
}

/// Output size and leading padding along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct AxisGeometry {
    pub out: usize,
    pub pad_before: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding: PaddingMode::SameCeil,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(config_err(format!("conv channels must be positive: {self:?}")));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 {
            return Err(config_err(format!("conv kernel and stride must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Spatial output size for an `h x w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    fn axis(&self, input: usize, kernel: usize) -> AxisGeometry {
        let out = input.div_ceil(self.stride);
        let needed = (out.saturating_sub(1) * self.stride + kernel).saturating_sub(input);
        AxisGeometry {
            out,
            pad_before: needed / 2,
        }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1
    }

    fn check_shapes<T: Scalar>(&self, input: &Tensor4<T>, weights: &Tensor4<T>) -> Result<()> {
        self.validate()?;
        if weights.dims() != self.weight_dims() {
            return Err(config_err(format!(
                "conv weights have dims {:?}, expected {:?}",
                weights.dims(),
                self.weight_dims()
            )));
        }
        if input.channels() != self.in_channels {
            return Err(config_err(format!(
                "conv input has {} channels (dims {:?}), expected {}",
                input.channels(),
                input.dims(),
                self.in_channels
            )));
        }
        if input.height() == 0 || input.width() == 0 {
            return Err(config_err(format!("conv input has empty plane: {:?}", input.dims())));
        }
        Ok(())
    }
}

/// Unfolds one sample (`cin x h x w`) into a `(cin*kh*kw) x (oh*ow)` matrix.
fn im2col<T: Scalar>(
    x: &[T],
    h: usize,
    w: usize,
    spec: &ConvSpec,
    gy: AxisGeometry,
    gx: AxisGeometry,
    cols: &mut [T],
) {
    let p = gy.out * gx.out;
    let mut row = 0;
    for ci in 0..spec.in_channels {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..spec.kernel_h {
            for kj in 0..spec.kernel_w {
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..gy.out {
                    let iy = (oy * spec.stride + ki) as isize - gy.pad_before as isize;
                    let seg = &mut dst[oy * gx.out..(oy + 1) * gx.out];
                    if iy < 0 || iy >= h as isize {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in seg.iter_mut().enumerate() {
                        let ix = (ox * spec.stride + kj) as isize - gx.pad_before as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Inverse scatter of [`im2col`], accumulating into `dx`.
fn col2im<T: Scalar>(
    cols: &[T],
    h: usize,
    w: usize,
    spec: &ConvSpec,
    gy: AxisGeometry,
    gx: AxisGeometry,
    dx: &mut [T],
) {
    let p = gy.out * gx.out;
    let mut row = 0;
    for ci in 0..spec.in_channels {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ki in 0..spec.kernel_h {
            for kj in 0..spec.kernel_w {
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..gy.out {
                    let iy = (oy * spec.stride + ki) as isize - gy.pad_before as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..gx.out {
                        let ix = (ox * spec.stride + kj) as isize - gx.pad_before as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * gx.out + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// 2-D cross-correlation with same-ceil zero padding.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    bias: Option<&[T]>,
    spec: &ConvSpec,
) -> Result<Tensor4<T>> {
    spec.check_shapes(input, weights)?;
    if let Some(b) = bias {
        if b.len() != spec.out_channels {
            return Err(config_err(format!(
                "conv bias has {} entries, expected {}",
                b.len(),
                spec.out_channels
            )));
        }
    }
    let [n, _, h, w] = input.dims();
    let gy = spec.axis(h, spec.kernel_h);
    let gx = spec.axis(w, spec.kernel_w);
    let p = gy.out * gx.out;
    let k = spec.in_channels * spec.kernel_h * spec.kernel_w;
    let mut out = Tensor4::zeros([n, spec.out_channels, gy.out, gx.out]);
    let mut cols = if spec.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };

    for s in 0..n {
        let x = input.sample(s);
        let y = out.sample_mut(s);
        if let Some(b) = bias {
            for (co, &bv) in b.iter().enumerate() {
                y[co * p..(co + 1) * p].fill(bv);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        if spec.is_pointwise() {
            gemm(spec.out_channels, k, p, MatRef::new(weights.data()), MatRef::new(x), beta, y);
        } else {
            im2col(x, h, w, spec, gy, gx, &mut cols);
            gemm(spec.out_channels, k, p, MatRef::new(weights.data()), MatRef::new(&cols), beta, y);
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to all of its inputs.
#[derive(Debug, Clone)]
pub struct ConvGrads<T: Scalar> {
    pub grad_input: Tensor4<T>,
    pub grad_weights: Tensor4<T>,
    pub grad_bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    spec: &ConvSpec,
    grad_out: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    spec.check_shapes(input, weights)?;
    let [n, _, h, w] = input.dims();
    let gy = spec.axis(h, spec.kernel_h);
    let gx = spec.axis(w, spec.kernel_w);
    let expected = [n, spec.out_channels, gy.out, gx.out];
    if grad_out.dims() != expected {
        return Err(config_err(format!(
            "conv grad_out has dims {:?}, expected {expected:?}",
            grad_out.dims()
        )));
    }
    let p = gy.out * gx.out;
    let k = spec.in_channels * spec.kernel_h * spec.kernel_w;
    let mut grad_input = Tensor4::zeros(input.dims());
    let mut grad_weights = Tensor4::zeros(weights.dims());
    let mut grad_bias = vec![T::zero(); spec.out_channels];
    let mut cols = vec![T::zero(); if spec.is_pointwise() { 0 } else { k * p }];
    let mut dcols = vec![T::zero(); if spec.is_pointwise() { 0 } else { k * p }];

    for s in 0..n {
        let x = input.sample(s);
        let dy = grad_out.sample(s);
        for (co, gb) in grad_bias.iter_mut().enumerate() {
            *gb = *gb + dy[co * p..(co + 1) * p].iter().copied().sum();
        }
        if spec.is_pointwise() {
            gemm(spec.out_channels, p, k, MatRef::new(dy), MatRef::t(x), T::one(), grad_weights.data_mut());
            gemm(k, spec.out_channels, p, MatRef::t(weights.data()), MatRef::new(dy), T::zero(), grad_input.sample_mut(s));
        } else {
            im2col(x, h, w, spec, gy, gx, &mut cols);
            gemm(spec.out_channels, p, k, MatRef::new(dy), MatRef::t(&cols), T::one(), grad_weights.data_mut());
            gemm(k, spec.out_channels, p, MatRef::t(weights.data()), MatRef::new(dy), T::zero(), &mut dcols);
            col2im(&dcols, h, w, spec, gy, gx, grad_input.sample_mut(s));
        }
    }
    Ok(ConvGrads {
        grad_input,
        grad_weights,
        grad_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution, independent of im2col/gemm.
    fn naive_conv(x: &Tensor4<f64>, wt: &Tensor4<f64>, b: &[f64], spec: &ConvSpec) -> Tensor4<f64> {
        let [n, _, h, w] = x.dims();
        let (oh, ow) = spec.output_hw(h, w);
        let pt = ((oh - 1) * spec.stride + spec.kernel_h).saturating_sub(h) / 2;
        let pl = ((ow - 1) * spec.stride + spec.kernel_w).saturating_sub(w) / 2;
        Tensor4::from_fn([n, spec.out_channels, oh, ow], |[s, co, oy, ox]| {
            let mut acc = b[co];
            for ci in 0..spec.in_channels {
                for ki in 0..spec.kernel_h {
                    for kj in 0..spec.kernel_w {
                        let iy = (oy * spec.stride + ki) as isize - pt as isize;
                        let ix = (ox * spec.stride + kj) as isize - pl as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            acc += x.get(s, ci, iy as usize, ix as usize) * wt.get(co, ci, ki, kj);
                        }
                    }
                }
            }
            acc
        })
    }

    fn random(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
        Tensor4::from_fn(dims, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn pointwise_identity() {
        let spec = ConvSpec::new(1, 1, 1, 1);
        let x = Tensor4::from_vec([1, 1, 2, 3], vec![1.0f32, -2.0, 3.0, 4.5, 0.0, 6.0]).unwrap();
        let wt = Tensor4::from_vec([1, 1, 1, 1], vec![1.0f32]).unwrap();
        let y = conv2d_forward(&x, &wt, Some(&[0.0]), &spec).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn strided_sum() {
        let spec = ConvSpec::new(1, 1, 2, 2);
        let x = Tensor4::from_vec([1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let wt = Tensor4::filled([1, 1, 2, 2], 1.0f32);
        let y = conv2d_forward(&x, &wt, Some(&[0.0]), &spec).unwrap();
        assert_eq!(y.dims(), [1, 1, 1, 1]);
        assert_eq!(y.data()[0], 10.0);
    }

    #[test]
    fn same_ceil_shapes() {
        for (size, stride) in [(480, 8), (854, 8), (7, 2), (8, 2), (1, 3), (96, 2), (13, 4)] {
            let spec = ConvSpec::new(1, 1, 3, stride);
            let x = Tensor4::<f32>::zeros([1, 1, size, size]);
            let wt = Tensor4::zeros(spec.weight_dims());
            let y = conv2d_forward(&x, &wt, None, &spec).unwrap();
            assert_eq!(y.height(), size.div_ceil(stride), "size {size} stride {stride}");
        }
        // three stride-2 layers: 480x854 -> 60x107
        let mut x = Tensor4::<f32>::zeros([1, 1, 480, 854]);
        let spec = ConvSpec::new(1, 1, 3, 2);
        let wt = Tensor4::zeros(spec.weight_dims());
        for _ in 0..3 {
            x = conv2d_forward(&x, &wt, None, &spec).unwrap();
        }
        assert_eq!((x.height(), x.width()), (60, 107));
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (cin, cout, k, stride, h, w) in [(2, 3, 3, 1, 5, 6), (3, 4, 3, 2, 7, 9), (2, 2, 1, 2, 5, 5), (1, 2, 5, 3, 8, 4)] {
            let spec = ConvSpec::new(cin, cout, k, stride);
            let x = random([2, cin, h, w], &mut rng);
            let wt = random(spec.weight_dims(), &mut rng);
            let b: Vec<f64> = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fast = conv2d_forward(&x, &wt, Some(&b), &spec).unwrap();
            let slow = naive_conv(&x, &wt, &b, &spec);
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let spec = ConvSpec::new(2, 3, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random([1, 2, 6, 6], &mut rng);
        let wt = random(spec.weight_dims(), &mut rng);
        let g = conv2d_backward(&x, &wt, &spec, &Tensor4::zeros([1, 3, 3, 3])).unwrap();
        assert!(g.grad_input.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_weights.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_passes_gradient() {
        let spec = ConvSpec::new(1, 1, 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random([1, 1, 4, 4], &mut rng);
        let dy = random([1, 1, 4, 4], &mut rng);
        let wt = Tensor4::filled([1, 1, 1, 1], 1.0);
        let g = conv2d_backward(&x, &wt, &spec, &dy).unwrap();
        assert_eq!(g.grad_input, dy);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let spec = ConvSpec::new(2, 3, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random([1, 2, 5, 5], &mut rng);
        let wt = random(spec.weight_dims(), &mut rng);
        let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // loss = <probe, conv(x)>
        let probe = random([1, 3, 5, 5], &mut rng);
        let loss = |x: &Tensor4<f64>, wt: &Tensor4<f64>, b: &[f64]| -> f64 {
            let y = conv2d_forward(x, wt, Some(b), &spec).unwrap();
            y.data().iter().zip(probe.data()).map(|(a, p)| a * p).sum()
        };
        let g = conv2d_backward(&x, &wt, &spec, &probe).unwrap();
        let eps = 1e-4;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        let mut worst: f64 = 0.0;
        for i in 0..x.data().len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += eps;
            xm.data_mut()[i] -= eps;
            let num = (loss(&xp, &wt, &b) - loss(&xm, &wt, &b)) / (2.0 * eps);
            worst = worst.max(rel(g.grad_input.data()[i], num));
        }
        for i in 0..wt.data().len() {
            let (mut wp, mut wm) = (wt.clone(), wt.clone());
            wp.data_mut()[i] += eps;
            wm.data_mut()[i] -= eps;
            let num = (loss(&x, &wp, &b) - loss(&x, &wm, &b)) / (2.0 * eps);
            worst = worst.max(rel(g.grad_weights.data()[i], num));
        }
        for i in 0..b.len() {
            let (mut bp, mut bm) = (b.clone(), b.clone());
            bp[i] += eps;
            bm[i] -= eps;
            let num = (loss(&x, &wt, &bp) - loss(&x, &wt, &bm)) / (2.0 * eps);
            worst = worst.max(rel(g.grad_bias[i], num));
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn rejects_mismatched_dims() {
        let spec = ConvSpec::new(3, 4, 3, 1);
        let x = Tensor4::<f32>::zeros([1, 2, 4, 4]);
        let wt = Tensor4::zeros(spec.weight_dims());
        let err = conv2d_forward(&x, &wt, None, &spec).unwrap_err();
        assert!(err.to_string().contains("2 channels"));
        let bad_w = Tensor4::<f32>::zeros([4, 3, 1, 1]);
        let x3 = Tensor4::<f32>::zeros([1, 3, 4, 4]);
        assert!(conv2d_forward(&x3, &bad_w, None, &spec).is_err());
    }
}
