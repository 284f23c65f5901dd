//! Closed-form Gaussian-mixture denoiser. For an isotropic mixture the
//! posterior mean E[z0 | z_t] has an exact expression, so this model serves
//! as a ground-truth oracle for every sampling loop in the crate. Prompts
//! act by restricting (and optionally reweighting) the component set: a
//! "text" prompt is a component subset, null-text is the full mixture.

use crate::diffusion::{check_step, Denoiser, PromptSpec};
use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::schedule::NoiseSchedule;
use serde::{Deserialize, Serialize};

/// Isotropic Gaussian mixture over latent grids: K congruent means, one
/// shared standard deviation, weights summing to 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GmmModelData", into = "GmmModelData")]
pub struct GmmModel {
    means: Vec<LatentGrid>,
    sigma: f64,
    weights: Vec<f64>,
}

/// Raw JSON shape of a mixture; `GmmModel::new` revalidates on the way in.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GmmModelData {
    means: Vec<LatentGrid>,
    sigma: f64,
    weights: Vec<f64>,
}

impl TryFrom<GmmModelData> for GmmModel {
    type Error = Error;

    fn try_from(data: GmmModelData) -> Result<Self> {
        GmmModel::new(data.means, data.sigma, data.weights)
    }
}

impl From<GmmModel> for GmmModelData {
    fn from(model: GmmModel) -> Self {
        GmmModelData { means: model.means, sigma: model.sigma, weights: model.weights }
    }
}

impl GmmModel {
    pub fn new(means: Vec<LatentGrid>, sigma: f64, weights: Vec<f64>) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::InvalidConfig("mixture needs at least one component".into()));
        }
        if weights.len() != means.len() {
            return Err(Error::InvalidConfig(format!(
                "{} means but {} weights",
                means.len(),
                weights.len()
            )));
        }
        for mean in &means[1..] {
            means[0].check_same_dims(mean, "mixture means")?;
        }
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "sigma must be finite and nonnegative, got {sigma}"
            )));
        }
        let mut total = 0.0;
        for &w in &weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "weights must be finite and nonnegative, got {w}"
                )));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { means, sigma, weights })
    }

    pub fn component_count(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[LatentGrid] {
        &self.means
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.means[0].dims()
    }

    /// Resolves a prompt to (component index, weight) pairs normalized to
    /// sum to 1. Null-text selects the full mixture with original weights.
    pub fn selected(&self, prompt: &PromptSpec) -> Result<Vec<(usize, f64)>> {
        match prompt {
            PromptSpec::NullText => Ok(self.weights.iter().copied().enumerate().collect()),
            PromptSpec::Conditioned { selector, reweight } => {
                if selector.is_empty() {
                    return Err(Error::InvalidPrompt("selector is empty".into()));
                }
                let mut seen = vec![false; self.means.len()];
                for &k in selector {
                    if k >= self.means.len() {
                        return Err(Error::InvalidPrompt(format!(
                            "selector index {k} out of range for {} components",
                            self.means.len()
                        )));
                    }
                    if seen[k] {
                        return Err(Error::InvalidPrompt(format!(
                            "selector repeats component {k}"
                        )));
                    }
                    seen[k] = true;
                }
                if let Some(rw) = reweight {
                    if rw.len() != selector.len() {
                        return Err(Error::InvalidPrompt(format!(
                            "{} selector entries but {} reweights",
                            selector.len(),
                            rw.len()
                        )));
                    }
                    for &r in rw {
                        if !r.is_finite() || r < 0.0 {
                            return Err(Error::InvalidPrompt(format!(
                                "reweights must be finite and nonnegative, got {r}"
                            )));
                        }
                    }
                }
                let mut pairs: Vec<(usize, f64)> = selector
                    .iter()
                    .enumerate()
                    .map(|(i, &k)| {
                        let factor = reweight.as_ref().map_or(1.0, |rw| rw[i]);
                        (k, self.weights[k] * factor)
                    })
                    .collect();
                let total: f64 = pairs.iter().map(|&(_, w)| w).sum();
                if total <= 0.0 {
                    return Err(Error::InvalidPrompt(
                        "selected components carry zero total weight".into(),
                    ));
                }
                for pair in &mut pairs {
                    pair.1 /= total;
                }
                Ok(pairs)
            }
        }
    }
}

/// Responsibilities of the selected components for z_t, computed in
/// log-space: log r_k = log w_k - ||z_t - sqrt(abar) mu_k||^2 / (2 s^2)
/// up to a shared normalizer. Returned in `selected` order, summing to 1.
fn responsibilities(
    z_t: &LatentGrid,
    model: &GmmModel,
    selected: &[(usize, f64)],
    sqrt_abar: f64,
    marginal_var: f64,
) -> Result<Vec<f64>> {
    let mut log_r = Vec::with_capacity(selected.len());
    for &(k, w) in selected {
        let diff = z_t.affine_sum(1.0, &model.means[k], -sqrt_abar)?;
        let sq: f64 = diff.as_array().iter().map(|v| v * v).sum();
        log_r.push(w.ln() - sq / (2.0 * marginal_var));
    }
    // At least one weight is positive, so the max is finite and the shifted
    // exponentials sum to at least 1.
    let max = log_r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for lr in &mut log_r {
        *lr = (*lr - max).exp();
        total += *lr;
    }
    for lr in &mut log_r {
        *lr /= total;
    }
    Ok(log_r)
}

/// E[z0 | z_t] under the prompt-restricted mixture. The marginal of each
/// component at step t is N(sqrt(abar_t) mu_k, (abar_t sigma^2 + 1 - abar_t) I);
/// responsibilities come from those likelihoods in log-space, and each
/// component contributes its posterior mean
/// mu_k + (sqrt(abar_t) sigma^2 / (abar_t sigma^2 + 1 - abar_t)) (z_t - sqrt(abar_t) mu_k).
pub fn gmm_posterior_mean(
    z_t: &LatentGrid,
    t: usize,
    model: &GmmModel,
    prompt: &PromptSpec,
    sched: &NoiseSchedule,
) -> Result<LatentGrid> {
    check_step(t, 0, sched.steps())?;
    z_t.check_same_dims(&model.means[0], "gmm_posterior_mean input")?;
    let selected = model.selected(prompt)?;
    let abar = sched.alpha_bar(t);
    let sqrt_abar = sched.sqrt_alpha_bar(t);
    let marginal_var = abar * model.sigma * model.sigma + (1.0 - abar);
    if marginal_var == 0.0 {
        // sigma = 0 at the clean level: each component's marginal is a point
        // mass, so the posterior is well defined only for a lone component.
        if selected.len() == 1 {
            return Ok(model.means[selected[0].0].clone());
        }
        return Err(Error::InvalidStep {
            t,
            reason: "degenerate marginal (sigma = 0 at the clean level) with multiple components"
                .into(),
        });
    }
    let resp = responsibilities(z_t, model, &selected, sqrt_abar, marginal_var)?;
    let coeff = sqrt_abar * model.sigma * model.sigma / marginal_var;
    let (c, h, w) = z_t.dims();
    let mut out = LatentGrid::zeros(c, h, w)?;
    for (&(k, _), &r) in selected.iter().zip(&resp) {
        // mu_k + coeff (z_t - sqrt(abar) mu_k) = (1 - coeff sqrt(abar)) mu_k + coeff z_t.
        let component = model.means[k].affine_sum(1.0 - coeff * sqrt_abar, z_t, coeff)?;
        out = out.affine_sum(1.0, &component, r)?;
    }
    Ok(out)
}

/// Noise prediction via the parameterization bridge
/// eps_hat = (z_t - sqrt(abar_t) zhat0) / sqrt(1 - abar_t); requires t >= 1.
pub fn gmm_predict_noise(
    z_t: &LatentGrid,
    t: usize,
    model: &GmmModel,
    prompt: &PromptSpec,
    sched: &NoiseSchedule,
) -> Result<LatentGrid> {
    check_step(t, 1, sched.steps())?;
    let z0_hat = gmm_posterior_mean(z_t, t, model, prompt, sched)?;
    let denom = sched.sqrt_one_minus_alpha_bar(t);
    z_t.affine_sum(1.0 / denom, &z0_hat, -sched.sqrt_alpha_bar(t) / denom)
}

/// The mixture oracle packaged behind the `Denoiser` interface.
#[derive(Debug, Clone)]
pub struct GmmDenoiser {
    model: GmmModel,
    sched: NoiseSchedule,
}

impl GmmDenoiser {
    pub fn new(model: GmmModel, sched: NoiseSchedule) -> Self {
        Self { model, sched }
    }

    pub fn model(&self) -> &GmmModel {
        &self.model
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }
}

impl Denoiser for GmmDenoiser {
    fn predict_noise(&self, z_t: &LatentGrid, t: usize, prompt: &PromptSpec) -> Result<LatentGrid> {
        gmm_predict_noise(z_t, t, &self.model, prompt, &self.sched)
    }
}
