//! Data degradation, scale sampling, the L1 noise-prediction objective and
//! the two-phase (fixed scale, then continuous scale) training loop.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, DenoiserConfig, ScaleFactor};
use crate::error::{shape_err, Error, Result};
use crate::nn::{Ctx, ParamStore};
use crate::resample::bicubic;
use crate::sampler::gaussian;
use crate::schedule::{mix, NoiseSchedule, ScheduleParams};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Steps at the fixed scale `M`.
    pub milestone_steps: u64,
    /// Steps with `s ~ U(1, M]` after the milestone.
    pub post_milestone_steps: u64,
    pub lr_phase1: f64,
    pub lr_phase2: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            milestone_steps: 2000,
            post_milestone_steps: 1000,
            lr_phase1: 1e-4,
            lr_phase2: 2e-5,
            batch_size: 2,
            seed: 0,
            checkpoint_every: 1000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr_phase1 > 0.0 && self.lr_phase2 > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.lr_phase2 > self.lr_phase1 {
            return bad(format!("train.lr_phase2 {} exceeds train.lr_phase1 {}", self.lr_phase2, self.lr_phase1));
        }
        if self.batch_size == 0 {
            return bad("train.batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return bad("Adam coefficients out of range".into());
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        self.milestone_steps + self.post_milestone_steps
    }

    /// Phase of the step with 0-based index `step`.
    pub fn phase_at(&self, step: u64) -> Phase {
        if step < self.milestone_steps {
            Phase::Fixed
        } else {
            Phase::Continuous
        }
    }

    pub fn lr(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Fixed => self.lr_phase1,
            Phase::Continuous => self.lr_phase2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Fixed,
    Continuous,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Fixed => "fixed",
            Phase::Continuous => "continuous",
        })
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Phase::Fixed),
            "continuous" => Ok(Phase::Continuous),
            _ => Err(Error::Data(format!("unknown phase {s:?}"))),
        }
    }
}

/// Smallest HR side that supports every scale up to `max_scale` at `lr_size`.
pub fn hr_size(lr_size: usize, max_scale: f64) -> usize {
    (lr_size as f64 * max_scale - 1e-9).ceil() as usize
}

/// Produces `(x_lr, y0)` from an HR image `[C, H, W]`: both are bicubic
/// resizes of `hr`, to `lr` and to `round(s * lr)` respectively.
pub fn degrade<T: Real>(
    hr: &Tensor<T>,
    s: f64,
    lr: (usize, usize),
    max_scale: f64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let shape = hr.shape();
    if shape.len() < 2 {
        return Err(shape_err(format!("image of shape {shape:?}")));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let (need_h, need_w) = (hr_size(lr.0, max_scale), hr_size(lr.1, max_scale));
    if h < need_h || w < need_w {
        return Err(Error::Data(format!("HR image {h}x{w} smaller than {need_h}x{need_w} needed for scale {max_scale}")));
    }
    let (oh, ow) = crate::denoiser::output_size(lr.0, lr.1, s);
    Ok((bicubic(hr, lr.0, lr.1)?, bicubic(hr, oh, ow)?))
}

/// `M` in the fixed phase, otherwise a uniform draw from `(1, M]`.
pub fn sample_scale(phase: Phase, max_scale: f64, rng: &mut impl Rng) -> f64 {
    match phase {
        Phase::Fixed => max_scale,
        Phase::Continuous => max_scale - rng.random::<f64>() * (max_scale - 1.0),
    }
}

/// Mean absolute difference.
pub fn loss<T: Real>(eps: &Tensor<T>, eps_pred: &Tensor<T>) -> Result<f64> {
    eps.check_same(eps_pred)?;
    let total: f64 = eps.data().iter().zip(eps_pred.data()).map(|(&a, &b)| (a.to_f64c() - b.to_f64c()).abs()).sum();
    Ok(total / eps.len() as f64)
}

/// Adam with bias correction; moments are kept per parameter in store order.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ParamStore<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|(_, _, p)| Tensor::zeros(p.shape())).collect::<Vec<_>>();
        Self { beta1, beta2, eps, t: 0, m: zeros(), v: zeros() }
    }

    /// Applies one update; a missing gradient counts as zero.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(shape_err(format!("{} gradients, {} moments for {} parameters", grads.len(), self.m.len(), params.len())));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2) = (T::from_f64c(self.beta1), T::from_f64c(self.beta2));
        let (ob1, ob2) = (T::one() - b1, T::one() - b2);
        let step = T::from_f64c(lr / c1);
        let inv_c2 = T::from_f64c(1.0 / c2);
        let eps = T::from_f64c(self.eps);
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = params.get_mut(id).data_mut();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            match &grads[i] {
                Some(g) => {
                    for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                        *m = b1 * *m + ob1 * g;
                        *v = b2 * *v + ob2 * g * g;
                        *p -= step * *m / ((*v * inv_c2).sqrt() + eps);
                    }
                }
                None => {
                    for ((p, m), v) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m;
                        *v = b2 * *v;
                        *p -= step * *m / ((*v * inv_c2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// HR working images with their identifiers.
#[derive(Clone, Debug, Default)]
pub struct Dataset<T> {
    pub names: Vec<String>,
    pub images: Vec<Tensor<T>>,
}

impl<T: Real> Dataset<T> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct TrainBatch<T> {
    pub x_lr: Tensor<T>,
    pub y0: Tensor<T>,
    pub s: f64,
    pub phase: Phase,
    /// 1-based diffusion step per item.
    pub t: Vec<usize>,
    pub eps: Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// 1-based index of the completed step.
    pub step: u64,
    pub phase: Phase,
    pub s: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

const DROPOUT_STREAM: u64 = 1 << 63;

/// Per-step RNG: a function of `(seed, step)` only, so resumed runs repeat exactly.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// The model, its parameters and optimizer, and the position in the run.
pub struct Trainer<T: Real> {
    pub model: Denoiser,
    pub params: ParamStore<T>,
    pub adam: Adam<T>,
    pub sched: NoiseSchedule,
    pub model_cfg: DenoiserConfig,
    pub cfg: TrainConfig,
    pub lr_size: usize,
    /// Steps completed so far.
    pub step: u64,
}

impl<T: Real> Trainer<T> {
    /// A fresh run with parameters initialized from `cfg.seed`.
    pub fn new(model_cfg: &DenoiserConfig, sched: &ScheduleParams, cfg: &TrainConfig, lr_size: usize) -> Result<Self> {
        cfg.validate()?;
        let sched = sched.build().map_err(|e| Error::Config(e.to_string()))?;
        let (model, params) = Denoiser::init::<T>(model_cfg, cfg.seed)?;
        let adam = Adam::new(&params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        Ok(Self { model, params, adam, sched, model_cfg: model_cfg.clone(), cfg: cfg.clone(), lr_size, step: 0 })
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.cfg.total_steps()
    }

    /// The batch for the step with 0-based index `step`.
    pub fn make_batch(&self, data: &Dataset<T>, step: u64) -> Result<TrainBatch<T>> {
        if data.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let mut rng = step_rng(self.cfg.seed, step);
        let m = self.model_cfg.max_scale;
        let phase = self.cfg.phase_at(step);
        let s = sample_scale(phase, m, &mut rng);
        let n = self.cfg.batch_size;
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        let mut t = Vec::with_capacity(n);
        for _ in 0..n {
            let idx = rng.random_range(0..data.len());
            let (x, y) = degrade(&data.images[idx], s, (self.lr_size, self.lr_size), m)?;
            xs.push(x);
            ys.push(y);
            t.push(rng.random_range(1..=self.sched.steps()));
        }
        let y0 = Tensor::stack(&ys)?;
        let eps = gaussian(&mut rng, y0.shape());
        Ok(TrainBatch { x_lr: Tensor::stack(&xs)?, y0, s, phase, t, eps })
    }

    /// The objective and parameter gradients on `batch`, without updating anything.
    pub fn loss_and_grads(&self, batch: &TrainBatch<T>, step: u64) -> Result<(f64, Vec<Option<Tensor<T>>>)> {
        let gammas = batch.t.iter().map(|&t| self.sched.gamma(t)).collect::<Result<Vec<_>>>()?;
        let mut data = Vec::with_capacity(batch.y0.len());
        for (i, &g) in gammas.iter().enumerate() {
            data.extend(mix(&batch.y0.batch_slice(i, 1)?, &batch.eps.batch_slice(i, 1)?, g).into_data());
        }
        let y_t = Tensor::new(batch.y0.shape(), data)?;
        let mut drop_rng = step_rng(self.cfg.seed, step);
        drop_rng.set_stream(step | DROPOUT_STREAM);
        let mut ctx = Ctx::train(&self.params, self.model_cfg.dropout, drop_rng);
        let x = ctx.graph.constant(batch.x_lr.clone());
        let y = ctx.graph.constant(y_t);
        let s = ScaleFactor::new(batch.s, self.model_cfg.max_scale)?;
        let pred = self.model.forward(&mut ctx, x, y, &gammas, s)?;
        let l = ctx.graph.l1_loss(pred, &batch.eps)?;
        let loss = ctx.value(l).data()[0].to_f64c();
        if !loss.is_finite() {
            return Err(Error::Training { step: step + 1, detail: format!("loss is {loss} (s = {}, t = {:?})", batch.s, batch.t) });
        }
        let mut grads = ctx.graph.backward(l)?;
        let out = self.params.ids().map(|id| grads.take_param(id.0)).collect();
        Ok((loss, out))
    }

    /// One optimizer step on `batch`.
    pub fn train_step(&mut self, batch: &TrainBatch<T>) -> Result<StepReport> {
        let (loss, grads) = self.loss_and_grads(batch, self.step)?;
        let norm = grads
            .iter()
            .flatten()
            .flat_map(|g| g.data().iter())
            .map(|&v| v.to_f64c() * v.to_f64c())
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() {
            return Err(Error::Training { step: self.step + 1, detail: format!("gradient norm is {norm} at loss {loss}") });
        }
        self.adam.step(&mut self.params, &grads, self.cfg.lr(batch.phase))?;
        self.step += 1;
        Ok(StepReport { step: self.step, phase: batch.phase, s: batch.s, loss, grad_norm: norm })
    }

    /// Builds the next batch and trains on it.
    pub fn step_once(&mut self, data: &Dataset<T>) -> Result<StepReport> {
        let batch = self.make_batch(data, self.step)?;
        self.train_step(&batch)
    }

    /// Trains to the configured total, calling `on_step` after every step.
    pub fn run(&mut self, data: &Dataset<T>, mut on_step: impl FnMut(&Self, &StepReport) -> Result<()>) -> Result<()> {
        if data.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        while !self.is_done() {
            let report = self.step_once(data)?;
            on_step(self, &report)?;
        }
        Ok(())
    }
}
