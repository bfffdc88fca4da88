//! The command-line operations, callable as library functions.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::denoiser::ScaleFactor;
use crate::error::{Error, Result};
use crate::io::{self, Checkpoint, RunConfig, LOSS_LOG_HEADER};
use crate::metrics::{consistency, psnr, ssim, to_unit_range, EvalRecord, EvalReport};
use crate::sampler::{sample, SamplerConfig, VarianceMode};
use crate::synth::shapes_image;
use crate::trainer::{degrade, hr_size, Trainer};

pub const LOSS_LOG_FILE: &str = "loss.tsv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn checkpoint_name(step: u64) -> String {
    format!("step-{step:08}.ckpt")
}

/// Mixes a per-item index into a base seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: u64,
    pub last_loss: Option<f64>,
    pub final_checkpoint: PathBuf,
    pub loss_log: PathBuf,
}

/// Trains from a config file, optionally resuming from a checkpoint.
///
/// The dataset is read before anything is written, so data errors leave no output.
pub fn cmd_train(config: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    let cfg = RunConfig::load(config)?;
    let mut trainer = match resume {
        Some(p) => Checkpoint::load(p)?.restore_trainer()?,
        None => Trainer::<f32>::new(&cfg.model, &cfg.schedule, &cfg.train, cfg.data.lr_size)?,
    };
    let data = io::image::load_dataset(&cfg.data.train_dir, hr_size(trainer.lr_size, trainer.model_cfg.max_scale))?;
    let out = &cfg.data.out_dir;
    fs::create_dir_all(out)?;
    let log_path = out.join(LOSS_LOG_FILE);
    let mut log = if resume.is_some() && log_path.exists() {
        BufWriter::new(OpenOptions::new().append(true).open(&log_path)?)
    } else {
        let mut f = BufWriter::new(File::create(&log_path)?);
        f.write_all(LOSS_LOG_HEADER.as_bytes())?;
        f
    };
    let every = trainer.cfg.checkpoint_every;
    let mut last_loss = None;
    trainer.run(&data, |tr, r| {
        log.write_all(io::format_record(&r.into()).as_bytes())?;
        last_loss = Some(r.loss);
        if every > 0 && r.step % every == 0 {
            log.flush()?;
            Checkpoint::from_trainer(tr).save(&out.join(checkpoint_name(r.step)))?;
        }
        Ok(())
    })?;
    log.flush()?;
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    Checkpoint::from_trainer(&trainer).save(&final_checkpoint)?;
    Ok(TrainSummary { steps: trainer.step, last_loss, final_checkpoint, loss_log: log_path })
}

#[derive(Clone, Debug)]
pub struct SampleArgs {
    pub checkpoint: PathBuf,
    pub input: PathBuf,
    pub scale: f64,
    pub seed: u64,
    pub output: PathBuf,
    pub variance: VarianceMode,
}

/// Super-resolves one PNG; returns the output `(height, width)`.
pub fn cmd_sample(args: &SampleArgs) -> Result<(usize, usize)> {
    let s = ScaleFactor::extrapolated(args.scale)?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let (model, params) = ckpt.load_model()?;
    let sched = ckpt.meta.schedule.build().map_err(|e| Error::Checkpoint(e.to_string()))?;
    let x = io::image::load_image(&args.input)?;
    let cfg = SamplerConfig { variance: args.variance, seed: args.seed };
    let y = sample(&model, &params, &x, s, &sched, &cfg)?;
    io::image::save_png(&args.output, &y)?;
    Ok((y.shape()[1], y.shape()[2]))
}

#[derive(Clone, Debug)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub scales: Vec<f64>,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub variance: VarianceMode,
}

/// Degrades every image in a directory, super-resolves it at each scale and scores the result.
pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    if args.scales.is_empty() {
        return Err(Error::Config("no scales given".into()));
    }
    let scales = args.scales.iter().map(|&s| ScaleFactor::extrapolated(s)).collect::<Result<Vec<_>>>()?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let (model, params) = ckpt.load_model()?;
    let sched = ckpt.meta.schedule.build().map_err(|e| Error::Checkpoint(e.to_string()))?;
    let lr = ckpt.meta.lr_size;
    let top = scales.iter().map(|s| s.value()).fold(ckpt.meta.model.max_scale, f64::max);
    let data = io::image::load_dataset(&args.data, hr_size(lr, top))?;
    let mut records = Vec::with_capacity(data.len() * scales.len());
    for (i, (name, hr)) in data.names.iter().zip(&data.images).enumerate() {
        let cfg = SamplerConfig { variance: args.variance, seed: derive_seed(args.seed, i as u64) };
        for &s in &scales {
            let (x, y0) = degrade(hr, s.value(), (lr, lr), top)?;
            let sr = sample(&model, &params, &x, s, &sched, &cfg)?;
            let (x, y0, sr) = (to_unit_range(&x), to_unit_range(&y0), to_unit_range(&sr));
            records.push(EvalRecord {
                image: name.clone(),
                scale: s.value(),
                psnr: psnr(&sr, &y0, 1.0)?,
                ssim: ssim(&sr, &y0)?,
                consistency: consistency(&x, &sr)?,
            });
        }
    }
    let report = EvalReport::from_records(records, args.seed);
    if let Some(path) = &args.output {
        fs::write(path, io::report_to_toml(&report))?;
    }
    Ok(report)
}

/// Writes `count` synthetic shape images of side `size`; returns their paths.
pub fn cmd_synth(dir: &Path, count: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    if size == 0 {
        return Err(Error::Param("image size must be positive".into()));
    }
    fs::create_dir_all(dir)?;
    (0..count)
        .map(|i| {
            let path = dir.join(format!("shapes-{i:03}.png"));
            io::image::save_png(&path, &shapes_image::<f32>(size, derive_seed(seed, i as u64)))?;
            Ok(path)
        })
        .collect()
}

/// Writes the default configuration, refusing to overwrite.
pub fn cmd_init_config(path: &Path) -> Result<()> {
    if path.exists() {
        return Err(Error::Param(format!("{} already exists", path.display())));
    }
    fs::write(path, RunConfig::default().to_toml())?;
    Ok(())
}
