//! The null-text-null inpainting pipeline. A run splits the reverse process
//! at step lambda*T: the early stage drives three concurrent branches
//! (null-text with unmasked blending, text-guided with low-band
//! substitution, null-text with mid-band substitution), the late stage
//! continues the third branch alone with per-step unmasked blending. Every
//! random draw comes from a dedicated ChaCha stream of the run seed, so any
//! feature toggle leaves the other streams' draws untouched.

use crate::diffusion::{
    ddim_invert, ddim_step, ddpm_step, forward_diffuse, Denoiser, PromptKind, PromptSpec,
};
use crate::error::{Error, Result};
use crate::grid::{LatentGrid, RegionMask};
use crate::schedule::NoiseSchedule;
use crate::snapshot::{step_file_name, write_snapshot};
use crate::spectral::{
    adaptive_low_threshold, adaptive_mid_thresholds, low_pass_mask, mid_pass_mask,
    substitute_band, BandThresholdParams,
};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Stream indices fanned out from one run seed. Consumers never share a
/// stream: the input draw, branch initialization, per-step sampler noise,
/// and the forward-noise gt trajectory stay independent of each other.
pub const STREAM_INPUT: u64 = 0;
pub const STREAM_INIT: u64 = 1;
pub const STREAM_STEP_NOISE: u64 = 2;
pub const STREAM_GT_NOISE: u64 = 3;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    Ddim,
    Ddpm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GtSource {
    DdimInversion,
    ForwardNoise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillRule {
    Zero,
    Mean,
}

/// A branch's prompt slot. `Text` resolves to the run's user prompt —
/// whatever `PromptSpec` the caller passed — and `Null` to null-text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchPrompt {
    Null,
    Text,
}

impl BranchPrompt {
    fn resolve(self, user: &PromptSpec) -> PromptSpec {
        match self {
            BranchPrompt::Null => PromptSpec::NullText,
            BranchPrompt::Text => user.clone(),
        }
    }
}

/// Which state of the first branch donates the low band: its post-blend
/// state at level t, or its post-denoise state at level t-1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LowBandDonor {
    PreDenoise,
    PostDenoise,
}

/// Explicit band thresholds used where the adaptive rule is switched off.
/// Applied verbatim: values outside [0, h+w-2] are legal and may leave a
/// band empty; only the mid-band ordering is enforced.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedThresholds {
    pub th_lp: f64,
    pub th_mp1: f64,
    pub th_mp2: f64,
}

impl FixedThresholds {
    fn validate(&self) -> Result<()> {
        if ![self.th_lp, self.th_mp1, self.th_mp2].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidThreshold("fixed thresholds must be finite".into()));
        }
        if !(self.th_mp1 < self.th_mp2) {
            return Err(Error::InvalidThreshold(format!(
                "fixed mid band inverts: {} >= {}",
                self.th_mp1, self.th_mp2
            )));
        }
        Ok(())
    }
}

/// Fully-materialized run configuration; every field is concrete so a
/// serialized copy reproduces the run byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub steps: usize,
    pub lambda: f64,
    pub sampler: Sampler,
    pub gt_source: GtSource,
    pub fill: FillRule,
    pub branch_prompts: [BranchPrompt; 3],
    pub masked_attention: bool,
    pub branches_12: bool,
    pub branch3_substitution: bool,
    pub adaptive_low: bool,
    pub adaptive_mid: bool,
    pub low_band_donor: LowBandDonor,
    pub inversion_prompt: BranchPrompt,
    pub band: BandThresholdParams,
    pub fixed: Option<FixedThresholds>,
    pub seed: u64,
}

impl PipelineConfig {
    /// The full pipeline with untuned reference thresholds for an h x w
    /// latent: null/text/null prompts, masked attention, all branches and
    /// substitutions on, adaptive bands, DDIM sampling over an inverted gt
    /// trajectory.
    pub fn default_for(steps: usize, seed: u64, height: usize, width: usize) -> Self {
        PipelineConfig {
            steps,
            lambda: 0.6,
            sampler: Sampler::Ddim,
            gt_source: GtSource::DdimInversion,
            fill: FillRule::Zero,
            branch_prompts: [BranchPrompt::Null, BranchPrompt::Text, BranchPrompt::Null],
            masked_attention: true,
            branches_12: true,
            branch3_substitution: true,
            adaptive_low: true,
            adaptive_mid: true,
            low_band_donor: LowBandDonor::PreDenoise,
            inversion_prompt: BranchPrompt::Null,
            band: BandThresholdParams::defaults_for(height, width),
            fixed: None,
            seed,
        }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::InvalidConfig(format!(
                "pipeline needs at least 2 steps to split into stages, got {}",
                self.steps
            )));
        }
        if !self.lambda.is_finite() || self.lambda <= 0.0 || self.lambda >= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "lambda must lie strictly inside (0, 1), got {}",
                self.lambda
            )));
        }
        self.band.validate_for(height, width)?;
        if let Some(fixed) = &self.fixed {
            fixed.validate()?;
        }
        Ok(())
    }

    /// Thresholds actually applied to this run's mask: adaptive rules read
    /// the unmasked ratio, switched-off rules fall back to the explicit
    /// fixed thresholds or, absent those, the ratio-0 adaptive values.
    pub fn resolve_thresholds(&self, mask: &RegionMask) -> Result<ResolvedThresholds> {
        let th_lp = if self.adaptive_low {
            adaptive_low_threshold(mask, &self.band)
        } else {
            self.fixed.map_or(self.band.lam_f_lp, |f| f.th_lp)
        };
        let (th_mp1, th_mp2) = if self.adaptive_mid {
            adaptive_mid_thresholds(mask, &self.band)?
        } else {
            let (lo, hi) = self
                .fixed
                .map_or((self.band.lam_f_mp1, self.band.lam_f_mp2), |f| (f.th_mp1, f.th_mp2));
            if !(lo < hi) {
                return Err(Error::InvalidThreshold(format!(
                    "fixed mid band inverts: {lo} >= {hi}"
                )));
            }
            (lo, hi)
        };
        Ok(ResolvedThresholds { th_lp, th_mp1, th_mp2 })
    }
}

/// Band thresholds as applied to one run (the mask ratio is fixed per run,
/// so these are step-invariant).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedThresholds {
    pub th_lp: f64,
    pub th_mp1: f64,
    pub th_mp2: f64,
}

/// The step index separating the stages: nearest integer to lambda*steps
/// with ties rounded down (down = one more early step), clamped to
/// [1, steps-1] so both stages are nonempty.
pub fn split_step(steps: usize, lambda: f64) -> Result<usize> {
    if steps < 2 {
        return Err(Error::InvalidConfig(format!("cannot split {steps} steps into two stages")));
    }
    if !lambda.is_finite() || lambda <= 0.0 || lambda >= 1.0 {
        return Err(Error::InvalidConfig(format!("lambda {lambda} outside (0, 1)")));
    }
    let rounded = (lambda * steps as f64 - 0.5).ceil();
    Ok(rounded.clamp(1.0, (steps - 1) as f64) as usize)
}

/// Overwrites masked cells (m_z = 0) with the fill value: zero, or the
/// per-channel mean of the unmasked cells (0 when nothing is unmasked).
pub fn apply_fill(input: &LatentGrid, m_z: &Array2<u8>, rule: FillRule) -> Result<LatentGrid> {
    check_latent_mask(input, m_z)?;
    let (c, h, w) = input.dims();
    let unmasked = m_z.iter().filter(|&&b| b == 1).count();
    let mut out = input.clone();
    for ch in 0..c {
        let fill = match rule {
            FillRule::Zero => 0.0,
            FillRule::Mean if unmasked == 0 => 0.0,
            FillRule::Mean => {
                let mut sum = 0.0;
                for r in 0..h {
                    for col in 0..w {
                        if m_z[[r, col]] == 1 {
                            sum += input.as_array()[[ch, r, col]];
                        }
                    }
                }
                sum / unmasked as f64
            }
        };
        for r in 0..h {
            for col in 0..w {
                if m_z[[r, col]] == 0 {
                    out.as_array_mut()[[ch, r, col]] = fill;
                }
            }
        }
    }
    Ok(out)
}

/// z_gt where m_z = 1, z_branch where m_z = 0, as per-cell selection so
/// unmasked cells carry the gt bits exactly (signed zeros included).
pub fn blend_unmasked(
    z_branch: &LatentGrid,
    z_gt: &LatentGrid,
    m_z: &Array2<u8>,
) -> Result<LatentGrid> {
    z_branch.check_same_dims(z_gt, "blend_unmasked")?;
    check_latent_mask(z_branch, m_z)?;
    let mut out = z_branch.clone();
    for ((ch, r, col), v) in out.as_array_mut().indexed_iter_mut() {
        if m_z[[r, col]] == 1 {
            *v = z_gt.as_array()[[ch, r, col]];
        }
    }
    Ok(out)
}

fn check_latent_mask(grid: &LatentGrid, m_z: &Array2<u8>) -> Result<()> {
    let (_, h, w) = grid.dims();
    if m_z.dim() != (h, w) {
        return Err(Error::InvalidShape(format!(
            "latent mask {}x{} does not match latent {h}x{w}",
            m_z.nrows(),
            m_z.ncols()
        )));
    }
    if m_z.iter().any(|&b| b > 1) {
        return Err(Error::InvalidShape("latent mask entries must be 0 or 1".into()));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Early,
    Late,
    Final,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Un,
    Text,
    In,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandName {
    Low,
    Mid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiseCall {
    pub phase: Phase,
    pub branch: Branch,
    pub t: usize,
    pub prompt: PromptKind,
    pub masked_attention: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubstitutionRecord {
    pub t: usize,
    pub band: BandName,
    pub recipient: Branch,
    pub coefficients: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlendRecord {
    pub phase: Phase,
    pub t: usize,
    pub branch: Branch,
}

/// Code-path record of one run: every denoiser call, band substitution and
/// unmasked blend in execution order. Configuration equivalences (prompt
/// variants, toggled stages) are asserted by diffing these traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub gt_source: GtSource,
    pub inversion_prompt: Option<PromptKind>,
    pub split: usize,
    pub thresholds: Option<ResolvedThresholds>,
    pub denoise_calls: Vec<DenoiseCall>,
    pub substitutions: Vec<SubstitutionRecord>,
    pub blends: Vec<BlendRecord>,
}

/// All three branch states after the step at t (each at noise level t-1).
#[derive(Clone, Debug)]
pub struct EarlyRecord {
    pub t: usize,
    pub z_un: LatentGrid,
    pub z_text: LatentGrid,
    pub z_in: LatentGrid,
}

/// A post-blend, pre-denoise state; its unmasked cells must carry the gt
/// trajectory's bits for the same t.
#[derive(Clone, Debug)]
pub struct BlendedState {
    pub phase: Phase,
    pub t: usize,
    pub state: LatentGrid,
}

/// Everything a run produced, frame by frame.
#[derive(Clone, Debug)]
pub struct TrajectoryLog {
    /// Gt trajectory, index = noise level, 0..=steps.
    pub gt: Vec<LatentGrid>,
    /// Chronological inpainting-branch frames, one per noise level from T
    /// down to 0; the final frame is the blended output.
    pub zin: Vec<LatentGrid>,
    /// Chronological early-stage frames of the side branches (initial state
    /// plus one per early step); empty when the run had no side branches.
    pub un: Vec<LatentGrid>,
    pub text: Vec<LatentGrid>,
    /// Post-step branch triples per early step.
    pub early: Vec<EarlyRecord>,
    /// Post-blend states in blend order.
    pub blended: Vec<BlendedState>,
}

impl TrajectoryLog {
    pub fn final_state(&self) -> &LatentGrid {
        self.zin.last().expect("a run always records at least one frame")
    }

    /// Writes the zin series to dir/step_NNNN.bin (chronological, 0-based)
    /// and, when the run had side branches, their early series to dir/un
    /// and dir/text in the same naming scheme.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, frame) in self.zin.iter().enumerate() {
            write_snapshot(&dir.join(step_file_name(i)), frame)?;
        }
        for (name, series) in [("un", &self.un), ("text", &self.text)] {
            if series.is_empty() {
                continue;
            }
            let sub = dir.join(name);
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            for (i, frame) in series.iter().enumerate() {
                write_snapshot(&sub.join(step_file_name(i)), frame)?;
            }
        }
        Ok(())
    }
}

/// A finished run: the inpainted latent, its frame-by-frame log, and the
/// code-path trace.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub output: LatentGrid,
    pub log: TrajectoryLog,
    pub trace: RunTrace,
}

fn check_finite(state: &LatentGrid, what: &str, t: usize) -> Result<()> {
    if !state.is_finite() {
        return Err(Error::NonFinite(format!("{what} produced non-finite values at step {t}")));
    }
    Ok(())
}

fn reverse_step(
    z: &LatentGrid,
    t: usize,
    eps_hat: &LatentGrid,
    sampler: Sampler,
    sched: &NoiseSchedule,
    step_rng: &mut ChaCha12Rng,
) -> Result<LatentGrid> {
    match sampler {
        Sampler::Ddim => ddim_step(z, t, eps_hat, sched),
        Sampler::Ddpm => {
            let (c, h, w) = z.dims();
            let noise = LatentGrid::standard_normal(c, h, w, step_rng)?;
            ddpm_step(z, t, eps_hat, sched, &noise)
        }
    }
}

fn build_gt_trajectory(
    filled: &LatentGrid,
    user_prompt: &PromptSpec,
    cfg: &PipelineConfig,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
) -> Result<Vec<LatentGrid>> {
    let gt = match cfg.gt_source {
        GtSource::DdimInversion => {
            let prompt = cfg.inversion_prompt.resolve(user_prompt);
            ddim_invert(filled, sched, denoiser, &prompt)?
        }
        GtSource::ForwardNoise => {
            // One eps grid reused through the closed form keeps all levels
            // mutually consistent: z_t = sqrt(abar_t) z0 + sqrt(1-abar_t) eps.
            let (c, h, w) = filled.dims();
            let mut rng = stream_rng(cfg.seed, STREAM_GT_NOISE);
            let eps = LatentGrid::standard_normal(c, h, w, &mut rng)?;
            (0..=sched.steps())
                .map(|t| forward_diffuse(filled, t, &eps, sched))
                .collect::<Result<Vec<_>>>()?
        }
    };
    for (t, state) in gt.iter().enumerate() {
        check_finite(state, "gt trajectory", t)?;
    }
    Ok(gt)
}

fn validate_run_inputs(
    input: &LatentGrid,
    mask: &RegionMask,
    cfg: &PipelineConfig,
    sched: &NoiseSchedule,
) -> Result<()> {
    let (_, h, w) = input.dims();
    cfg.validate(h, w)?;
    if cfg.steps != sched.steps() {
        return Err(Error::InvalidConfig(format!(
            "config declares {} steps but the schedule has {}",
            cfg.steps,
            sched.steps()
        )));
    }
    if !input.is_finite() {
        return Err(Error::NonFinite("input latent contains non-finite values".into()));
    }
    let _ = mask;
    Ok(())
}

/// The full null-text-null run. Phase I lifts the filled input to a gt
/// trajectory; phase II walks the three early branches from t = steps down
/// to split+1; phase III continues the inpainting branch with per-step
/// blends down to t = 1 and applies one final unmasked blend against the
/// clean gt state.
pub fn run_ntn(
    input: &LatentGrid,
    mask: &RegionMask,
    prompt: &PromptSpec,
    cfg: &PipelineConfig,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
) -> Result<RunOutput> {
    validate_run_inputs(input, mask, cfg, sched)?;
    let (c, h, w) = input.dims();
    let m_z = mask.downsample(h, w)?;
    let thresholds = cfg.resolve_thresholds(mask)?;
    let low_band = low_pass_mask(h, w, thresholds.th_lp)?;
    let mid_band = mid_pass_mask(h, w, thresholds.th_mp1, thresholds.th_mp2)?;
    let split = split_step(cfg.steps, cfg.lambda)?;

    let filled = apply_fill(input, &m_z, cfg.fill)?;
    let gt = build_gt_trajectory(&filled, prompt, cfg, denoiser, sched)?;

    let mut init_rng = stream_rng(cfg.seed, STREAM_INIT);
    let mut z_un = LatentGrid::standard_normal(c, h, w, &mut init_rng)?;
    let mut z_text = LatentGrid::standard_normal(c, h, w, &mut init_rng)?;
    let mut z_in = LatentGrid::standard_normal(c, h, w, &mut init_rng)?;
    let mut step_rng = stream_rng(cfg.seed, STREAM_STEP_NOISE);

    let prompts = [
        cfg.branch_prompts[0].resolve(prompt),
        cfg.branch_prompts[1].resolve(prompt),
        cfg.branch_prompts[2].resolve(prompt),
    ];
    let late_prompt = BranchPrompt::Text.resolve(prompt);

    let mut trace = RunTrace {
        gt_source: cfg.gt_source,
        inversion_prompt: match cfg.gt_source {
            GtSource::DdimInversion => Some(cfg.inversion_prompt.resolve(prompt).kind()),
            GtSource::ForwardNoise => None,
        },
        split,
        thresholds: Some(thresholds),
        denoise_calls: Vec::new(),
        substitutions: Vec::new(),
        blends: Vec::new(),
    };
    let mut log = TrajectoryLog {
        gt,
        zin: vec![z_in.clone()],
        un: if cfg.branches_12 { vec![z_un.clone()] } else { Vec::new() },
        text: if cfg.branches_12 { vec![z_text.clone()] } else { Vec::new() },
        early: Vec::new(),
        blended: Vec::new(),
    };

    for t in (split + 1..=cfg.steps).rev() {
        if cfg.branches_12 {
            let blended_un = blend_unmasked(&z_un, &log.gt[t], &m_z)?;
            trace.blends.push(BlendRecord { phase: Phase::Early, t, branch: Branch::Un });
            log.blended.push(BlendedState { phase: Phase::Early, t, state: blended_un.clone() });
            let eps = if cfg.masked_attention {
                denoiser.predict_noise_masked(&blended_un, t, &prompts[0], mask)?
            } else {
                denoiser.predict_noise(&blended_un, t, &prompts[0])?
            };
            trace.denoise_calls.push(DenoiseCall {
                phase: Phase::Early,
                branch: Branch::Un,
                t,
                prompt: prompts[0].kind(),
                masked_attention: cfg.masked_attention,
            });
            let z_un_next = reverse_step(&blended_un, t, &eps, cfg.sampler, sched, &mut step_rng)?;
            check_finite(&z_un_next, "un branch", t)?;

            let donor = match cfg.low_band_donor {
                LowBandDonor::PreDenoise => &blended_un,
                LowBandDonor::PostDenoise => &z_un_next,
            };
            let z_text_sub = substitute_band(donor, &z_text, &low_band)?;
            trace.substitutions.push(SubstitutionRecord {
                t,
                band: BandName::Low,
                recipient: Branch::Text,
                coefficients: low_band.count_ones(),
            });
            let eps = denoiser.predict_noise(&z_text_sub, t, &prompts[1])?;
            trace.denoise_calls.push(DenoiseCall {
                phase: Phase::Early,
                branch: Branch::Text,
                t,
                prompt: prompts[1].kind(),
                masked_attention: false,
            });
            let z_text_next =
                reverse_step(&z_text_sub, t, &eps, cfg.sampler, sched, &mut step_rng)?;
            check_finite(&z_text_next, "text branch", t)?;

            let z_in_input = if cfg.branch3_substitution {
                let sub = substitute_band(&z_text_next, &z_in, &mid_band)?;
                trace.substitutions.push(SubstitutionRecord {
                    t,
                    band: BandName::Mid,
                    recipient: Branch::In,
                    coefficients: mid_band.count_ones(),
                });
                sub
            } else {
                z_in.clone()
            };
            let eps = denoiser.predict_noise(&z_in_input, t, &prompts[2])?;
            trace.denoise_calls.push(DenoiseCall {
                phase: Phase::Early,
                branch: Branch::In,
                t,
                prompt: prompts[2].kind(),
                masked_attention: false,
            });
            let z_in_next = reverse_step(&z_in_input, t, &eps, cfg.sampler, sched, &mut step_rng)?;
            check_finite(&z_in_next, "in branch", t)?;

            z_un = z_un_next;
            z_text = z_text_next;
            z_in = z_in_next;
            log.un.push(z_un.clone());
            log.text.push(z_text.clone());
        } else {
            let eps = denoiser.predict_noise(&z_in, t, &prompts[2])?;
            trace.denoise_calls.push(DenoiseCall {
                phase: Phase::Early,
                branch: Branch::In,
                t,
                prompt: prompts[2].kind(),
                masked_attention: false,
            });
            let z_in_next = reverse_step(&z_in, t, &eps, cfg.sampler, sched, &mut step_rng)?;
            check_finite(&z_in_next, "in branch", t)?;
            z_in = z_in_next;
        }
        log.early.push(EarlyRecord {
            t,
            z_un: z_un.clone(),
            z_text: z_text.clone(),
            z_in: z_in.clone(),
        });
        log.zin.push(z_in.clone());
    }

    run_late_stage(
        &mut z_in,
        split,
        &late_prompt,
        cfg,
        denoiser,
        sched,
        &m_z,
        &mut step_rng,
        &mut log,
        &mut trace,
    )?;

    Ok(RunOutput { output: log.final_state().clone(), log, trace })
}

/// Per-step blend + text-guided reverse step from t = from down to 1, then
/// the final unmasked blend against gt level 0. Shared verbatim by the late
/// stage of run_ntn and the whole of run_baseline_bld.
#[allow(clippy::too_many_arguments)]
fn run_late_stage(
    z_in: &mut LatentGrid,
    from: usize,
    prompt: &PromptSpec,
    cfg: &PipelineConfig,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    m_z: &Array2<u8>,
    step_rng: &mut ChaCha12Rng,
    log: &mut TrajectoryLog,
    trace: &mut RunTrace,
) -> Result<()> {
    for t in (1..=from).rev() {
        let blended = blend_unmasked(z_in, &log.gt[t], m_z)?;
        trace.blends.push(BlendRecord { phase: Phase::Late, t, branch: Branch::In });
        log.blended.push(BlendedState { phase: Phase::Late, t, state: blended.clone() });
        let eps = denoiser.predict_noise(&blended, t, prompt)?;
        trace.denoise_calls.push(DenoiseCall {
            phase: Phase::Late,
            branch: Branch::In,
            t,
            prompt: prompt.kind(),
            masked_attention: false,
        });
        *z_in = reverse_step(&blended, t, &eps, cfg.sampler, sched, step_rng)?;
        check_finite(z_in, "in branch", t)?;
        log.zin.push(z_in.clone());
    }
    let final_state = blend_unmasked(z_in, &log.gt[0], m_z)?;
    trace.blends.push(BlendRecord { phase: Phase::Final, t: 0, branch: Branch::In });
    log.blended.push(BlendedState { phase: Phase::Final, t: 0, state: final_state.clone() });
    *log.zin.last_mut().expect("zin starts nonempty") = final_state;
    Ok(())
}

/// Blended-latent baseline: one text-guided branch with the same unmasked
/// blend at every step and the same final blend. Draws a single initial
/// grid from the branch-init stream.
pub fn run_baseline_bld(
    input: &LatentGrid,
    mask: &RegionMask,
    prompt: &PromptSpec,
    cfg: &PipelineConfig,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
) -> Result<RunOutput> {
    validate_run_inputs(input, mask, cfg, sched)?;
    let (c, h, w) = input.dims();
    let m_z = mask.downsample(h, w)?;
    let filled = apply_fill(input, &m_z, cfg.fill)?;
    let gt = build_gt_trajectory(&filled, prompt, cfg, denoiser, sched)?;

    let mut init_rng = stream_rng(cfg.seed, STREAM_INIT);
    let mut z_in = LatentGrid::standard_normal(c, h, w, &mut init_rng)?;
    let mut step_rng = stream_rng(cfg.seed, STREAM_STEP_NOISE);
    let late_prompt = BranchPrompt::Text.resolve(prompt);

    let mut trace = RunTrace {
        gt_source: cfg.gt_source,
        inversion_prompt: match cfg.gt_source {
            GtSource::DdimInversion => Some(cfg.inversion_prompt.resolve(prompt).kind()),
            GtSource::ForwardNoise => None,
        },
        split: 0,
        thresholds: None,
        denoise_calls: Vec::new(),
        substitutions: Vec::new(),
        blends: Vec::new(),
    };
    let mut log = TrajectoryLog {
        gt,
        zin: vec![z_in.clone()],
        un: Vec::new(),
        text: Vec::new(),
        early: Vec::new(),
        blended: Vec::new(),
    };

    run_late_stage(
        &mut z_in,
        cfg.steps,
        &late_prompt,
        cfg,
        denoiser,
        sched,
        &m_z,
        &mut step_rng,
        &mut log,
        &mut trace,
    )?;

    Ok(RunOutput { output: log.final_state().clone(), log, trace })
}
