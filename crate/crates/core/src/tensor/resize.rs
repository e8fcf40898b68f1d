use super::{Scalar, Tensor4};
use crate::error::{config_err, Result};

/// Source coordinate and blend weight for each output index, align-corners.
fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = if output > 1 {
        (input - 1) as f64 / (output - 1) as f64
    } else {
        0.0
    };
    (0..output)
        .map(|o| {
            let src = o as f64 * scale;
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Align-corners bilinear resize of every plane to `target_h x target_w`.
pub fn bilinear_resize<T: Scalar>(input: &Tensor4<T>, target_h: usize, target_w: usize) -> Result<Tensor4<T>> {
    if target_h == 0 || target_w == 0 {
        return Err(config_err(format!(
            "bilinear target must be at least 1x1, got {target_h}x{target_w}"
        )));
    }
    let [n, c, h, w] = input.dims();
    if h == 0 || w == 0 {
        return Err(config_err(format!("cannot resize empty planes {:?}", input.dims())));
    }
    let rows = axis_taps(h, target_h);
    let cols = axis_taps(w, target_w);
    let mut out = Tensor4::zeros([n, c, target_h, target_w]);
    for s in 0..n {
        for ch in 0..c {
            let src = input.plane(s, ch);
            let dst = out.plane_mut(s, ch);
            for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                    let v00 = src[y0 * w + x0].as_f64();
                    let v01 = src[y0 * w + x1].as_f64();
                    let v10 = src[y1 * w + x0].as_f64();
                    let v11 = src[y1 * w + x1].as_f64();
                    let top = v00 + (v01 - v00) * fx;
                    let bottom = v10 + (v11 - v10) * fx;
                    dst[oy * target_w + ox] = T::of_f64(top + (bottom - top) * fy);
                }
            }
        }
    }
    Ok(out)
}

/// Global extrema of a 2-D map with their (row, col) positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrema<T> {
    pub max: T,
    pub argmax: (usize, usize),
    pub min: T,
    pub argmin: (usize, usize),
}

impl<T> Extrema<T> {
    pub fn argmax_index(&self, width: usize) -> usize {
        self.argmax.0 * width + self.argmax.1
    }
    pub fn argmin_index(&self, width: usize) -> usize {
        self.argmin.0 * width + self.argmin.1
    }
}

/// Scans a row-major `height x width` map; ties keep the first occurrence.
pub fn spatial_extrema<T: Scalar>(map: &[T], height: usize, width: usize) -> Result<Extrema<T>> {
    if map.is_empty() || height * width == 0 {
        return Err(config_err("spatial_extrema of an empty map"));
    }
    if map.len() != height * width {
        return Err(config_err(format!(
            "map has {} values, expected {height}x{width}",
            map.len()
        )));
    }
    let (mut imax, mut imin) = (0, 0);
    for (i, &v) in map.iter().enumerate().skip(1) {
        if v > map[imax] {
            imax = i;
        }
        if v < map[imin] {
            imin = i;
        }
    }
    Ok(Extrema {
        max: map[imax],
        argmax: (imax / width, imax % width),
        min: map[imin],
        argmin: (imin / width, imin % width),
    })
}
