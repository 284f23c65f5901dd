//! Discrete noise schedule: beta_t for t = 1..=T and the cumulative
//! alpha_bar_t = prod_{s<=t} (1 - beta_s), with alpha_bar_0 = 1.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule from explicit betas, each in (0, 1). An empty list
    /// is the degenerate T = 0 schedule (alpha_bar = [1]).
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.iter().any(|b| !b.is_finite() || *b <= 0.0 || *b >= 1.0) {
            return Err(Error::InvalidConfig("every beta must lie in (0, 1)".into()));
        }
        let mut alpha_bar = Vec::with_capacity(betas.len() + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(NoiseSchedule { betas, alpha_bar })
    }

    /// Total number of diffusion steps T.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// beta_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        assert!(t >= 1 && t <= self.steps(), "beta index {t} outside 1..={}", self.steps());
        self.betas[t - 1]
    }

    /// alpha_bar_t for t in 0..=T; alpha_bar_0 = 1 exactly.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        assert!(t <= self.steps(), "alpha_bar index {t} outside 0..={}", self.steps());
        self.alpha_bar[t]
    }

    pub fn sqrt_alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar(t).sqrt()
    }

    pub fn sqrt_one_minus_alpha_bar(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t)).sqrt()
    }
}

/// Linear beta schedule from `beta_start` to `beta_end` over `steps` steps.
/// Endpoints are hit exactly; with steps = 1 the single beta is beta_start.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidConfig("schedule needs at least one step".into()));
    }
    if !beta_start.is_finite() || !beta_end.is_finite() {
        return Err(Error::InvalidConfig("beta endpoints must be finite".into()));
    }
    if beta_start <= 0.0 || beta_end >= 1.0 || beta_start > beta_end {
        return Err(Error::InvalidConfig(format!(
            "beta endpoints must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
        )));
    }
    let betas = if steps == 1 {
        vec![beta_start]
    } else {
        (0..steps)
            .map(|i| {
                if i == steps - 1 {
                    beta_end
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect()
    };
    NoiseSchedule::from_betas(betas)
}

/// Default desk-scale schedule: linear 1e-4..2e-2 over 100 steps.
pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 2e-2;
