pub mod commands;
pub mod conditioning;
pub mod denoiser;
pub mod error;
pub mod implicit;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod resample;
pub mod sampler;
pub mod schedule;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
