//! The demo operations as plain Rust functions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use diffsr::conditioning::{normalize_alphas, AdaptiveMlp};
use diffsr::denoiser::output_size;
use diffsr::implicit::{make_grid, nearest_lookup, NearestMap};
use diffsr::io::image::to_rgb_bytes;
use diffsr::nn::ParamStore;
use diffsr::resample::bicubic;
use diffsr::sampler::gaussian;
use diffsr::schedule::{q_sample, NoiseSchedule, ScheduleKind};
use diffsr::synth::shapes_image;
use diffsr::tensor::Tensor;
use diffsr::{Error, Result};

fn rgba(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let (rgb, _, _) = to_rgb_bytes(img)?;
    Ok(rgb.chunks(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect())
}

fn schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    NoiseSchedule::new(steps, beta_start, beta_end, ScheduleKind::Linear)
}

/// `gamma_t` for `t = 1..=steps` of a linear schedule.
pub fn gamma_curve(steps: usize, beta_start: f64, beta_end: f64) -> Result<Vec<f64>> {
    Ok(schedule(steps, beta_start, beta_end)?.gammas().to_vec())
}

/// A synthetic image after `t` forward noising steps, as `size x size` RGBA.
pub fn noised_image(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    t: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<u8>> {
    let sched = schedule(steps, beta_start, beta_end)?;
    let y0 = shapes_image::<f32>(size, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let eps = gaussian::<f32>(&mut rng, y0.shape());
    let y = q_sample(&y0, t, &eps, &sched)?;
    rgba(&y)
}

/// Output side for `lr_size` at magnification `scale`.
pub fn target_side(lr_size: usize, scale: f64) -> usize {
    output_size(lr_size, lr_size, scale).0
}

/// A synthetic LR image magnified by `scale`, either with the decoder's
/// cell-center nearest lookup (`bicubic = false`) or with bicubic resampling.
pub fn magnify(lr_size: usize, scale: f64, seed: u64, bicubic_mode: bool) -> Result<Vec<u8>> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Param("scale must be positive".into()));
    }
    let lr = bicubic(&shapes_image::<f32>(4 * lr_size, seed), lr_size, lr_size)?;
    let side = target_side(lr_size, scale).max(1);
    let out = if bicubic_mode {
        bicubic(&lr, side, side)?
    } else {
        let grid = make_grid(side, side)?;
        let (feats, _) = nearest_lookup(&lr, &grid)?;
        feats.reshape(&[3, side, side])?
    };
    rgba(&out)
}

/// Relative offsets from each target pixel to its nearest source center,
/// flattened as `[row offset, col offset]` pairs in row-major order.
pub fn grid_offsets(src_h: usize, src_w: usize, tgt_h: usize, tgt_w: usize) -> Result<Vec<f64>> {
    let src = make_grid(src_h, src_w)?;
    let tgt = make_grid(tgt_h, tgt_w)?;
    Ok(NearestMap::new(&src, &tgt).rel.into_iter().flatten().collect())
}

/// Normalized `(ā1, ā2)` for one raw pair.
pub fn normalize_pair(a1: f64, a2: f64) -> Result<Vec<f64>> {
    let (n1, n2) = normalize_alphas(&[a1], &[a2])?;
    Ok(vec![n1[0], n2[0]])
}

/// Normalized scaling vectors of a randomly initialized adaptive MLP across
/// `samples` evenly spaced scales in `[1, max_scale]`.
///
/// Layout: for each scale, `channels` values of `ā1` then `channels` of `ā2`,
/// taken from the first depth.
pub fn alpha_sweep(seed: u64, hidden: usize, channels: usize, max_scale: f64, samples: usize) -> Result<Vec<f64>> {
    if samples < 2 || max_scale.is_nan() || max_scale <= 1.0 {
        return Err(Error::Param("need at least 2 samples and max_scale > 1".into()));
    }
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mlp = AdaptiveMlp::new(&mut store, &mut rng, "adaptive", hidden, &[channels])?;
    let mut out = Vec::with_capacity(samples * 2 * channels);
    for k in 0..samples {
        let s = 1.0 + (max_scale - 1.0) * k as f64 / (samples - 1) as f64;
        let pair = mlp.evaluate(&store, s)?.swap_remove(0);
        out.extend(pair.normalized.0);
        out.extend(pair.normalized.1);
    }
    Ok(out)
}
