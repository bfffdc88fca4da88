use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use diffsr::commands::{self, EvalArgs, SampleArgs};
use diffsr::sampler::VarianceMode;
use diffsr::Result;

#[derive(Parser)]
#[command(name = "diffsr", version, about = "Continuous-scale diffusion super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variance {
    Beta,
    Posterior,
}

impl From<Variance> for VarianceMode {
    fn from(v: Variance) -> Self {
        match v {
            Variance::Beta => VarianceMode::Beta,
            Variance::Posterior => VarianceMode::Posterior,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a TOML run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Super-resolve one PNG image.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Magnification factor, > 1. Values above the trained maximum are allowed.
        #[arg(long)]
        scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "beta")]
        variance: Variance,
    },
    /// Score a checkpoint on a directory of HR images.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated magnifications, e.g. 2,4,6.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        scales: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "beta")]
        variance: Variance,
    },
    /// Write synthetic flat-shape PNGs for smoke tests.
    Synth {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the default run configuration.
    InitConfig {
        #[arg(long)]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, resume } => {
            let s = commands::cmd_train(&config, resume.as_deref())?;
            println!("trained {} steps; checkpoint {}", s.steps, s.final_checkpoint.display());
        }
        Command::Sample { checkpoint, input, scale, seed, output, variance } => {
            let (h, w) = commands::cmd_sample(&SampleArgs { checkpoint, input, scale, seed, output, variance: variance.into() })?;
            println!("{w}x{h}");
        }
        Command::Eval { checkpoint, data, scales, seed, output, variance } => {
            let r = commands::cmd_eval(&EvalArgs { checkpoint, data, scales, seed, output: Some(output), variance: variance.into() })?;
            for a in &r.aggregates {
                println!("scale {}: psnr {:.3} ssim {:.4} consistency {:.3}", a.scale, a.psnr, a.ssim, a.consistency);
            }
        }
        Command::Synth { dir, count, size, seed } => {
            let paths = commands::cmd_synth(&dir, count, size, seed)?;
            println!("wrote {} images to {}", paths.len(), dir.display());
        }
        Command::InitConfig { output } => commands::cmd_init_config(&output)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
