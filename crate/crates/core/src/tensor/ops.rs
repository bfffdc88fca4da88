//! Raw kernels behind the graph operations.

use super::{gemm, MatRef, Real};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if h + 2 * pad < k || w + 2 * pad < k || stride == 0 {
            return None;
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Some(Self { cin, h, w, k, stride, pad, ho, wo })
    }

    /// Pointwise convolutions read the input directly without unfolding.
    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn col_len(&self) -> usize {
        self.col_rows() * self.ho * self.wo
    }

    /// Output columns `[ox_lo, ox_hi)` whose input column `ox*stride + kx - pad` is in bounds.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let lo = if kx >= self.pad { 0 } else { (self.pad - kx).div_ceil(self.stride) };
        let limit = self.w + self.pad; // need ox*stride + kx < limit
        let hi = if limit > kx { ((limit - kx - 1) / self.stride + 1).min(self.wo) } else { 0 };
        (lo.min(hi), hi)
    }
}

/// Unfolds one image `[cin, h, w]` into `[cin*k*k, ho*wo]`.
pub(crate) fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.ho * g.wo;
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.ho {
                    let d = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        d.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    d[..lo].fill(T::zero());
                    d[hi..].fill(T::zero());
                    if g.stride == 1 {
                        let ix0 = lo + kx - g.pad;
                        d[lo..hi].copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                    } else {
                        for (ox, v) in d.iter_mut().enumerate().take(hi).skip(lo) {
                            *v = src[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `[cin*k*k, ho*wo]` columns into `[cin, h, w]`.
pub(crate) fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.ho * g.wo;
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let s = &src[oy * g.wo..(oy + 1) * g.wo];
                    let d = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in lo..hi {
                        d[ox * g.stride + kx - g.pad] += s[ox];
                    }
                }
            }
        }
    }
}

/// Forward convolution of a batch. Returns the output and, if requested, the unfolded inputs.
pub(crate) fn conv_forward<T: Real>(
    x: &[T],
    batch: usize,
    w: &[T],
    cout: usize,
    bias: Option<&[T]>,
    g: &ConvGeom,
    keep_cols: bool,
) -> (Vec<T>, Option<Vec<T>>) {
    let p = g.ho * g.wo;
    let kk = g.col_rows();
    let in_len = g.cin * g.h * g.w;
    let mut out = vec![T::zero(); batch * cout * p];
    let mut saved = if keep_cols && !g.is_pointwise() { Some(vec![T::zero(); batch * g.col_len()]) } else { None };
    let mut scratch = if saved.is_none() && !g.is_pointwise() { vec![T::zero(); g.col_len()] } else { Vec::new() };
    for b in 0..batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let cols: &[T] = if g.is_pointwise() {
            xb
        } else if let Some(s) = saved.as_mut() {
            let c = &mut s[b * g.col_len()..(b + 1) * g.col_len()];
            im2col(xb, g, c);
            c
        } else {
            im2col(xb, g, &mut scratch);
            &scratch
        };
        let yb = &mut out[b * cout * p..(b + 1) * cout * p];
        if let Some(bias) = bias {
            for (o, &bv) in bias.iter().enumerate() {
                yb[o * p..(o + 1) * p].fill(bv);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        gemm(MatRef::new(w, cout, kk), MatRef::new(cols, kk, p), yb, beta);
    }
    (out, saved)
}

/// `[b, c, h*w]` to `[b*h*w, c]`.
pub(crate) fn to_rows<T: Real>(x: &[T], b: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            let src = &x[(bi * c + ci) * p..(bi * c + ci + 1) * p];
            for (pi, &v) in src.iter().enumerate() {
                out[(bi * p + pi) * c + ci] = v;
            }
        }
    }
    out
}

/// `[b*h*w, c]` to `[b, c, h*w]`.
pub(crate) fn from_rows<T: Real>(x: &[T], b: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for pi in 0..p {
            let src = &x[(bi * p + pi) * c..(bi * p + pi + 1) * c];
            for (ci, &v) in src.iter().enumerate() {
                out[(bi * c + ci) * p + pi] = v;
            }
        }
    }
    out
}
