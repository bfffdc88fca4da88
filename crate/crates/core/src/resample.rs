//! Separable image resampling (bilinear and bicubic).
//!
//! Both kernels use the half-pixel-center convention: output pixel `i` of an
//! axis resized from `n_in` to `n_out` samples the input at
//! `(i + 0.5) * n_in / n_out - 0.5`. Bicubic downscaling widens the kernel by
//! the scale factor (antialiasing, as MATLAB's `imresize` does); bilinear does
//! not. Taps falling outside the image are clamped to the edge, and every row
//! of weights sums to one, so constant images stay constant.

use crate::error::{param_err, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    Bilinear,
    Bicubic,
}

impl Kernel {
    fn support(self) -> f64 {
        match self {
            Kernel::Bilinear => 1.0,
            Kernel::Bicubic => 2.0,
        }
    }

    fn eval(self, x: f64) -> f64 {
        let x = x.abs();
        match self {
            Kernel::Bilinear => (1.0 - x).max(0.0),
            Kernel::Bicubic => {
                // Keys cubic with a = -0.5
                if x <= 1.0 {
                    1.5 * x * x * x - 2.5 * x * x + 1.0
                } else if x < 2.0 {
                    -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0
                } else {
                    0.0
                }
            }
        }
    }

    fn antialias(self) -> bool {
        matches!(self, Kernel::Bicubic)
    }
}

/// Sparse resampling weights for one axis, stored row by row.
#[derive(Clone, Debug)]
pub struct AxisWeights {
    in_len: usize,
    out_len: usize,
    offsets: Vec<usize>,
    index: Vec<usize>,
    weight: Vec<f64>,
}

impl AxisWeights {
    pub fn new(in_len: usize, out_len: usize, kernel: Kernel) -> Result<Self> {
        if in_len == 0 || out_len == 0 {
            return Err(param_err(format!("resample {in_len} -> {out_len}")));
        }
        let mut offsets = vec![0];
        let mut index = Vec::new();
        let mut weight = Vec::new();
        if in_len == out_len {
            for i in 0..out_len {
                index.push(i);
                weight.push(1.0);
                offsets.push(index.len());
            }
            return Ok(Self { in_len, out_len, offsets, index, weight });
        }
        let scale = out_len as f64 / in_len as f64;
        let stretch = if kernel.antialias() && scale < 1.0 { 1.0 / scale } else { 1.0 };
        let support = kernel.support() * stretch;
        for i in 0..out_len {
            let center = (i as f64 + 0.5) / scale - 0.5;
            let lo = (center - support).floor() as i64;
            let hi = (center + support).ceil() as i64;
            let row_start = index.len();
            let mut total = 0.0;
            for j in lo..=hi {
                let w = kernel.eval((center - j as f64) / stretch);
                if w == 0.0 {
                    continue;
                }
                let src = j.clamp(0, in_len as i64 - 1) as usize;
                // merge clamped duplicates so rows stay short
                if let Some(pos) = index[row_start..].iter().position(|&s| s == src) {
                    weight[row_start + pos] += w;
                } else {
                    index.push(src);
                    weight.push(w);
                }
                total += w;
            }
            for w in &mut weight[row_start..] {
                *w /= total;
            }
            offsets.push(index.len());
        }
        Ok(Self { in_len, out_len, offsets, index, weight })
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.out_len
    }

    /// Taps `(source index, weight)` of output sample `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.index[r.clone()].iter().copied().zip(self.weight[r].iter().copied())
    }

    /// Resamples the middle axis of a `[outer, in_len, inner]` buffer.
    pub(crate) fn apply<T: Real>(&self, src: &[T], outer: usize, inner: usize) -> Vec<T> {
        debug_assert_eq!(src.len(), outer * self.in_len * inner);
        let taps: Vec<Vec<(usize, T)>> = (0..self.out_len)
            .map(|i| self.row(i).map(|(j, w)| (j, T::from_f64c(w))).collect())
            .collect();
        let mut out = vec![T::zero(); outer * self.out_len * inner];
        for o in 0..outer {
            let s = &src[o * self.in_len * inner..(o + 1) * self.in_len * inner];
            let d = &mut out[o * self.out_len * inner..(o + 1) * self.out_len * inner];
            for (i, row) in taps.iter().enumerate() {
                let dst = &mut d[i * inner..(i + 1) * inner];
                for &(j, w) in row {
                    for (a, &b) in dst.iter_mut().zip(&s[j * inner..(j + 1) * inner]) {
                        *a += w * b;
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`apply`](Self::apply): maps `[outer, out_len, inner]` back to `[outer, in_len, inner]`.
    pub(crate) fn apply_transpose<T: Real>(&self, grad: &[T], outer: usize, inner: usize) -> Vec<T> {
        debug_assert_eq!(grad.len(), outer * self.out_len * inner);
        let mut out = vec![T::zero(); outer * self.in_len * inner];
        for o in 0..outer {
            let g = &grad[o * self.out_len * inner..(o + 1) * self.out_len * inner];
            let d = &mut out[o * self.in_len * inner..(o + 1) * self.in_len * inner];
            for i in 0..self.out_len {
                let gi = &g[i * inner..(i + 1) * inner];
                for (j, w) in self.row(i) {
                    let w = T::from_f64c(w);
                    for (a, &b) in d[j * inner..(j + 1) * inner].iter_mut().zip(gi) {
                        *a += w * b;
                    }
                }
            }
        }
        out
    }
}

/// Resizes the two trailing axes of a `[..., H, W]` tensor.
pub fn resize<T: Real>(img: &Tensor<T>, out_h: usize, out_w: usize, kernel: Kernel) -> Result<Tensor<T>> {
    let shape = img.shape();
    if shape.len() < 2 {
        return Err(param_err(format!("cannot resize tensor of shape {shape:?}")));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let outer: usize = shape[..shape.len() - 2].iter().product();
    let mut out_shape = shape.to_vec();
    let n = out_shape.len();
    out_shape[n - 2] = out_h;
    out_shape[n - 1] = out_w;
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let rx = AxisWeights::new(w, out_w, kernel)?;
    let ry = AxisWeights::new(h, out_h, kernel)?;
    let tmp = rx.apply(img.data(), outer * h, 1);
    let data = ry.apply(&tmp, outer, out_w);
    Tensor::new(&out_shape, data)
}

pub fn bicubic<T: Real>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    resize(img, out_h, out_w, Kernel::Bicubic)
}

pub fn bilinear<T: Real>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    resize(img, out_h, out_w, Kernel::Bilinear)
}
