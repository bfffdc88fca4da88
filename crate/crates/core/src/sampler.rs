//! Reverse (generative) process: iterative denoising from Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, ScaleFactor, IMAGE_CHANNELS};
use crate::error::Result;
use crate::nn::ParamStore;
use crate::schedule::NoiseSchedule;
use crate::tensor::{Real, Tensor};

/// Choice of the per-step standard deviation `sigma_t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMode {
    /// `sigma_t^2 = beta_t`.
    #[default]
    Beta,
    /// `sigma_t^2` is the variance of `q(y_{t-1} | y_t, y_0)`.
    Posterior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub variance: VarianceMode,
    pub seed: u64,
}

/// `sigma_t` for step `t`; always 0 on the final step.
pub fn sigma(sched: &NoiseSchedule, t: usize, mode: VarianceMode) -> Result<f64> {
    let var = match mode {
        VarianceMode::Beta => sched.beta(t)?,
        VarianceMode::Posterior => sched.posterior_variance(t)?,
    };
    Ok(if t == 1 { 0.0 } else { var.sqrt() })
}

/// One reverse step with an explicit `sigma_t`:
/// `(y_t - beta_t / sqrt(1 - gamma_t) * eps_pred) / sqrt(1 - beta_t) + sigma_t * noise`.
pub fn p_step_with_sigma<T: Real>(
    y_t: &Tensor<T>,
    eps_pred: &Tensor<T>,
    t: usize,
    sched: &NoiseSchedule,
    noise: &Tensor<T>,
    sigma_t: f64,
) -> Result<Tensor<T>> {
    y_t.check_same(eps_pred)?;
    y_t.check_same(noise)?;
    let (b, g) = (sched.beta(t)?, sched.gamma(t)?);
    let inv = T::from_f64c(1.0 / (1.0 - b).sqrt());
    let k = T::from_f64c(b / (1.0 - g).sqrt());
    let sig = T::from_f64c(sigma_t);
    let data = y_t
        .data()
        .iter()
        .zip(eps_pred.data())
        .zip(noise.data())
        .map(|((&y, &e), &z)| inv * (y - k * e) + sig * z)
        .collect();
    Tensor::new(y_t.shape(), data)
}

/// One reverse step with `sigma_t` chosen by `mode`.
pub fn p_step<T: Real>(
    y_t: &Tensor<T>,
    eps_pred: &Tensor<T>,
    t: usize,
    sched: &NoiseSchedule,
    noise: &Tensor<T>,
    mode: VarianceMode,
) -> Result<Tensor<T>> {
    p_step_with_sigma(y_t, eps_pred, t, sched, noise, sigma(sched, t, mode)?)
}

pub fn gaussian<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64c(rng.sample::<f64, _>(StandardNormal)))
}

/// Runs `t = T..1` from `y_start`, calling `eps_fn(y_t, t)` exactly once per step.
///
/// With `rng = None` every step is noise-free (`sigma = 0`); otherwise fresh
/// standard-normal noise is drawn from `rng` for `t > 1`. The result is not clamped.
pub fn reverse_trajectory<T, F>(
    y_start: Tensor<T>,
    sched: &NoiseSchedule,
    mode: VarianceMode,
    mut rng: Option<&mut ChaCha8Rng>,
    mut eps_fn: F,
) -> Result<Tensor<T>>
where
    T: Real,
    F: FnMut(&Tensor<T>, usize) -> Result<Tensor<T>>,
{
    let mut y = y_start;
    for t in (1..=sched.steps()).rev() {
        let eps = eps_fn(&y, t)?;
        y = match rng.as_deref_mut() {
            Some(rng) if t > 1 => {
                let noise = gaussian(rng, y.shape());
                p_step(&y, &eps, t, sched, &noise, mode)?
            }
            _ => p_step_with_sigma(&y, &eps, t, sched, &Tensor::zeros(y.shape()), 0.0)?,
        };
    }
    Ok(y)
}

pub fn clamp_unit<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (lo, hi) = (-T::one(), T::one());
    x.map(|v| v.max(lo).min(hi))
}

/// Super-resolves `x_lr` (`[B, 3, h, w]` or `[3, h, w]`) by `s`.
///
/// Output is `round(s h) x round(s w)`, clamped to `[-1, 1]`. The same seed
/// yields the same output.
pub fn sample<T: Real>(
    model: &Denoiser,
    params: &ParamStore<T>,
    x_lr: &Tensor<T>,
    s: ScaleFactor,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<Tensor<T>> {
    let batched = x_lr.shape().len() == 4;
    let x = if batched { x_lr.clone() } else { x_lr.clone().reshape(&[1, x_lr.shape()[0], x_lr.shape()[1], x_lr.shape()[2]])? };
    let (b, _, h, w) = x.dims4()?;
    let (oh, ow) = s.output_size(h, w);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let y_start = gaussian(&mut rng, &[b, IMAGE_CHANNELS, oh, ow]);
    let y = reverse_trajectory(y_start, sched, cfg.variance, Some(&mut rng), |y_t, t| {
        let g = sched.gamma(t)?;
        model.predict(params, &x, y_t, &vec![g; b], s)
    })?;
    let y = clamp_unit(&y);
    if batched {
        Ok(y)
    } else {
        y.reshape(&[IMAGE_CHANNELS, oh, ow])
    }
}
