//! Frequency-aware diffusion inpainting engine: a null-text-null sampling
//! pipeline with DCT band substitution over a pluggable denoiser, an
//! analytic Gaussian-mixture denoiser as ground-truth oracle, frequency
//! diagnostics, and batch experiment plumbing.

pub mod attention;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod gmm;
pub mod grid;
pub mod metrics;
pub mod pipeline;
pub mod schedule;
pub mod snapshot;
pub mod spectral;
pub mod testbed;

pub use error::{Error, Result};
pub use grid::{LatentGrid, RegionMask};
pub use schedule::{make_schedule, NoiseSchedule};
