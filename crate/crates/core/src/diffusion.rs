//! Forward diffusion, deterministic DDIM and ancestral DDPM reverse steps,
//! DDIM inversion, and the denoiser interface the sampler drives.

use crate::error::{Error, Result};
use crate::grid::{LatentGrid, RegionMask};
use crate::schedule::NoiseSchedule;

/// Conditioning passed to a denoiser. `NullText` is the unconditional
/// branch; `Conditioned` restricts the analytic denoiser to a component
/// subset (the sandbox stand-in for a text prompt), optionally reweighted.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub enum PromptSpec {
    NullText,
    Conditioned {
        selector: Vec<usize>,
        reweight: Option<Vec<f64>>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PromptKind {
    NullText,
    Conditioned,
}

impl PromptSpec {
    pub fn null() -> Self {
        PromptSpec::NullText
    }

    pub fn conditioned(selector: Vec<usize>) -> Self {
        PromptSpec::Conditioned { selector, reweight: None }
    }

    pub fn kind(&self) -> PromptKind {
        match self {
            PromptSpec::NullText => PromptKind::NullText,
            PromptSpec::Conditioned { .. } => PromptKind::Conditioned,
        }
    }
}

/// A reverse-process noise predictor. Implementations own whatever state
/// they need (schedule, model parameters) and must be deterministic.
pub trait Denoiser: Send + Sync {
    fn predict_noise(&self, z_t: &LatentGrid, t: usize, prompt: &PromptSpec) -> Result<LatentGrid>;

    /// Variant with a region mask available for masked self-attention.
    /// Denoisers without an attention stage ignore the mask.
    fn predict_noise_masked(
        &self,
        z_t: &LatentGrid,
        t: usize,
        prompt: &PromptSpec,
        mask: &RegionMask,
    ) -> Result<LatentGrid> {
        let _ = mask;
        self.predict_noise(z_t, t, prompt)
    }
}

pub(crate) fn check_step(t: usize, lo: usize, hi: usize) -> Result<()> {
    if t < lo || t > hi {
        return Err(Error::InvalidStep { t, reason: format!("outside {lo}..={hi}") });
    }
    Ok(())
}

/// Closed-form mixing at an explicit alpha_bar, shared by forward_diffuse
/// and its limit-case tests.
fn mix_with_alpha_bar(z0: &LatentGrid, eps: &LatentGrid, alpha_bar: f64) -> Result<LatentGrid> {
    z0.affine_sum(alpha_bar.sqrt(), eps, (1.0 - alpha_bar).sqrt())
}

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, for t in 0..=T.
pub fn forward_diffuse(
    z0: &LatentGrid,
    t: usize,
    eps: &LatentGrid,
    sched: &NoiseSchedule,
) -> Result<LatentGrid> {
    check_step(t, 0, sched.steps())?;
    z0.check_same_dims(eps, "forward_diffuse")?;
    mix_with_alpha_bar(z0, eps, sched.alpha_bar(t))
}

/// Deterministic DDIM reverse step t -> t-1 (eta = 0):
/// zhat0 = (z_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t),
/// z_{t-1} = sqrt(abar_{t-1}) zhat0 + sqrt(1 - abar_{t-1}) eps_hat.
pub fn ddim_step(
    z_t: &LatentGrid,
    t: usize,
    eps_hat: &LatentGrid,
    sched: &NoiseSchedule,
) -> Result<LatentGrid> {
    check_step(t, 1, sched.steps())?;
    z_t.check_same_dims(eps_hat, "ddim_step")?;
    let z0_hat = z_t.affine_sum(
        1.0 / sched.sqrt_alpha_bar(t),
        eps_hat,
        -sched.sqrt_one_minus_alpha_bar(t) / sched.sqrt_alpha_bar(t),
    )?;
    z0_hat.affine_sum(
        sched.sqrt_alpha_bar(t - 1),
        eps_hat,
        sched.sqrt_one_minus_alpha_bar(t - 1),
    )
}

/// Ancestral DDPM reverse step t -> t-1:
/// mean = (z_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(1 - beta_t),
/// variance beta_t (1 - abar_{t-1}) / (1 - abar_t); the noise term is
/// forced to zero at t = 1.
pub fn ddpm_step(
    z_t: &LatentGrid,
    t: usize,
    eps_hat: &LatentGrid,
    sched: &NoiseSchedule,
    noise: &LatentGrid,
) -> Result<LatentGrid> {
    check_step(t, 1, sched.steps())?;
    z_t.check_same_dims(eps_hat, "ddpm_step")?;
    z_t.check_same_dims(noise, "ddpm_step noise")?;
    let beta = sched.beta(t);
    let alpha = 1.0 - beta;
    let mean = z_t.affine_sum(
        1.0 / alpha.sqrt(),
        eps_hat,
        -beta / (sched.sqrt_one_minus_alpha_bar(t) * alpha.sqrt()),
    )?;
    if t == 1 {
        return Ok(mean);
    }
    let var = beta * (1.0 - sched.alpha_bar(t - 1)) / (1.0 - sched.alpha_bar(t));
    mean.affine_sum(1.0, noise, var.sqrt())
}

/// DDIM inversion: lifts z0 to a trajectory [z_0, z_1, ..., z_T]. The step
/// t -> t+1 reverses the DDIM update using eps-hat at step t. At t = 0 the
/// epsilon-parameterization is degenerate and the conditional expectation
/// of noise given a clean state is exactly zero, so the first step uses
/// eps-hat = 0 instead of a denoiser query.
pub fn ddim_invert(
    z0: &LatentGrid,
    sched: &NoiseSchedule,
    denoiser: &dyn Denoiser,
    prompt: &PromptSpec,
) -> Result<Vec<LatentGrid>> {
    let (c, h, w) = z0.dims();
    let mut trajectory = Vec::with_capacity(sched.steps() + 1);
    trajectory.push(z0.clone());
    for t in 0..sched.steps() {
        let current = trajectory.last().expect("trajectory is nonempty");
        let eps_hat = if t == 0 {
            LatentGrid::zeros(c, h, w)?
        } else {
            denoiser.predict_noise(current, t, prompt)?
        };
        let z0_hat = current.affine_sum(
            1.0 / sched.sqrt_alpha_bar(t),
            &eps_hat,
            -sched.sqrt_one_minus_alpha_bar(t) / sched.sqrt_alpha_bar(t),
        )?;
        let next = z0_hat.affine_sum(
            sched.sqrt_alpha_bar(t + 1),
            &eps_hat,
            sched.sqrt_one_minus_alpha_bar(t + 1),
        )?;
        trajectory.push(next);
    }
    Ok(trajectory)
}

/// Plain DDIM sampling loop from an initial state at step T, recording the
/// chronological trajectory [z_T, z_{T-1}, ..., z_0].
pub fn ddim_sample_trajectory(
    z_init: &LatentGrid,
    sched: &NoiseSchedule,
    denoiser: &dyn Denoiser,
    prompt: &PromptSpec,
) -> Result<Vec<LatentGrid>> {
    let mut trajectory = Vec::with_capacity(sched.steps() + 1);
    trajectory.push(z_init.clone());
    for t in (1..=sched.steps()).rev() {
        let current = trajectory.last().expect("trajectory is nonempty");
        let eps_hat = denoiser.predict_noise(current, t, prompt)?;
        let next = ddim_step(current, t, &eps_hat, sched)?;
        trajectory.push(next);
    }
    Ok(trajectory)
}
