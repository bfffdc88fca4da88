//! Image quality metrics on `[0, 1]`-range images.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, Result};
use crate::resample::bicubic;
use crate::tensor::{Real, Tensor};

/// PSNR ceiling, reported when the MSE is negligible.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Consistency is reported in units of `1e-5`.
pub const CONSISTENCY_UNIT: f64 = 1e-5;

fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.check_same(b)?;
    if a.is_empty() {
        return Err(shape_err("empty image"));
    }
    let total: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x.to_f64c() - y.to_f64c()).powi(2)).sum();
    Ok(total / a.len() as f64)
}

/// `10 log10(peak^2 / MSE)`, capped at 100 dB once `MSE < peak^2 * 1e-10`.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if peak.is_nan() || peak <= 0.0 {
        return Err(param_err(format!("peak {peak} must be positive")));
    }
    let m = mse(a, b)?;
    if m < peak * peak * 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable valid-region filtering of one `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over the trailing two axes, averaged over all leading planes (channels).
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    ssim_with_peak(a, b, 1.0)
}

pub fn ssim_with_peak<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    a.check_same(b)?;
    let shape = a.shape();
    if shape.len() < 2 {
        return Err(shape_err(format!("SSIM needs at least 2 axes, got {shape:?}")));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(param_err(format!("{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")));
    }
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let k = gaussian_window();
    let planes = a.len() / (h * w);
    let mut total = 0.0;
    for p in 0..planes {
        let range = p * h * w..(p + 1) * h * w;
        let x: Vec<f64> = a.data()[range.clone()].iter().map(|v| v.to_f64c()).collect();
        let y: Vec<f64> = b.data()[range].iter().map(|v| v.to_f64c()).collect();
        let prod = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mx = filter_valid(&x, h, w, &k);
        let my = filter_valid(&y, h, w, &k);
        let sxx = filter_valid(&prod(&x, &x), h, w, &k);
        let syy = filter_valid(&prod(&y, &y), h, w, &k);
        let sxy = filter_valid(&prod(&x, &y), h, w, &k);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / planes as f64)
}

/// MSE between `x_lr` and `sr` bicubically downsampled to the LR size, in units of `1e-5`.
pub fn consistency<T: Real>(x_lr: &Tensor<T>, sr: &Tensor<T>) -> Result<f64> {
    let (ls, ss) = (x_lr.shape(), sr.shape());
    let n = ls.len();
    if n < 2 || ss.len() != n || ls[..n - 2] != ss[..n - 2] || ss[n - 2] < ls[n - 2] || ss[n - 1] < ls[n - 1] {
        return Err(shape_err(format!("SR {ss:?} is not an upscaling of LR {ls:?}")));
    }
    let down = bicubic(sr, ls[n - 2], ls[n - 1])?;
    Ok(mse(x_lr, &down)? / CONSISTENCY_UNIT)
}

/// Maps `[-1, 1]` model-space values to `[0, 1]`.
pub fn to_unit_range<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let half = T::from_f64c(0.5);
    x.map(|v| (v + T::one()) * half)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub image: String,
    pub scale: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub consistency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalAggregate {
    pub scale: f64,
    pub count: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub consistency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub format_version: u32,
    pub color_space: String,
    pub seed: u64,
    #[serde(default, rename = "record")]
    pub records: Vec<EvalRecord>,
    #[serde(default, rename = "aggregate")]
    pub aggregates: Vec<EvalAggregate>,
}

impl EvalReport {
    /// Builds the report with one aggregate per scale, in order of first appearance.
    pub fn from_records(records: Vec<EvalRecord>, seed: u64) -> Self {
        let mut scales: Vec<f64> = Vec::new();
        for r in &records {
            if !scales.contains(&r.scale) {
                scales.push(r.scale);
            }
        }
        let aggregates = scales
            .into_iter()
            .map(|s| {
                let group: Vec<&EvalRecord> = records.iter().filter(|r| r.scale == s).collect();
                let n = group.len() as f64;
                EvalAggregate {
                    scale: s,
                    count: group.len(),
                    psnr: group.iter().map(|r| r.psnr).sum::<f64>() / n,
                    ssim: group.iter().map(|r| r.ssim).sum::<f64>() / n,
                    consistency: group.iter().map(|r| r.consistency).sum::<f64>() / n,
                }
            })
            .collect();
        Self { format_version: 1, color_space: "rgb".into(), seed, records, aggregates }
    }
}
