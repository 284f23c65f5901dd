//! Experiment harness behind the CLI: a JSON config schema with explicit
//! two-phase loading (draft with optional fields, then a fully-materialized
//! resolved form that reproduces the run byte for byte), deterministic mask
//! and input construction, and the run / sweep / ablate / diagnose drivers.

use crate::diffusion::PromptSpec;
use crate::error::{Error, Result};
use crate::gmm::{GmmDenoiser, GmmModel};
use crate::grid::{LatentGrid, RegionMask};
use crate::metrics::{
    latent_to_gray, masked_unmasked_rows, report_bands, trajectory_report, MetricParams,
    MetricReport, MetricRow,
};
use crate::pipeline::{
    run_baseline_bld, run_ntn, stream_rng, BranchPrompt, FillRule, FixedThresholds, GtSource,
    LowBandDonor, PipelineConfig, RunOutput, RunTrace, Sampler, STREAM_INPUT,
};
use crate::schedule::{
    make_schedule, NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS,
};
use crate::snapshot::{read_pgm, read_snapshot, write_pgm, write_snapshot};
use crate::spectral::BandThresholdParams;
use crate::testbed;
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const DEFAULT_MASK_SCALE: usize = 8;
pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [0.9, 0.8, 0.7, 0.6, 0.5];

/// Where the mixture model comes from: a JSON file or an inline document.
/// Exactly one of the two must be present.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub inline: Option<GmmModel>,
}

pub fn load_model(spec: &ModelSpec) -> Result<GmmModel> {
    match (&spec.path, &spec.inline) {
        (Some(path), None) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::json(format!("model file {}", path.display()), e))
        }
        (None, Some(model)) => Ok(model.clone()),
        (Some(_), Some(_)) => {
            Err(Error::InvalidConfig("model takes either a path or an inline document, not both".into()))
        }
        (None, None) => Err(Error::InvalidConfig("model needs a path or an inline document".into())),
    }
}

/// Input latent: drawn near a mixture component (mean + jitter * sigma *
/// noise from the input stream) or read from a snapshot file. `file` is
/// exclusive with the other two.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    #[serde(default)]
    pub component: Option<usize>,
    #[serde(default)]
    pub jitter: Option<f64>,
    #[serde(default)]
    pub file: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskShape {
    Square,
    Half,
    CustomFile,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskPosition {
    Center,
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

/// Full-resolution mask construction. Synthetic shapes are built at
/// latent-dims * scale; a custom file supplies its own resolution (pixels
/// >= 128 count as unmasked).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub shape: MaskShape,
    #[serde(default)]
    pub coverage: Option<f64>,
    #[serde(default)]
    pub position: Option<MaskPosition>,
    #[serde(default)]
    pub scale: Option<usize>,
    #[serde(default)]
    pub path: Option<PathBuf>,
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec { shape: MaskShape::Square, coverage: None, position: None, scale: None, path: None }
    }
}

/// Prompt as a component selector with optional reweighting; absent means
/// null-text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptConfig {
    pub selector: Vec<usize>,
    #[serde(default)]
    pub reweight: Option<Vec<f64>>,
}

impl PromptConfig {
    pub fn to_prompt(config: &Option<PromptConfig>) -> PromptSpec {
        match config {
            None => PromptSpec::NullText,
            Some(p) => {
                PromptSpec::Conditioned { selector: p.selector.clone(), reweight: p.reweight.clone() }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub beta_start: f64,
    pub beta_end: f64,
}

// ---------------------------------------------------------------------am
// Draft schema: every field optional, unknown keys rejected.

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DraftPipeline {
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub sampler: Option<Sampler>,
    #[serde(default)]
    pub gt_source: Option<GtSource>,
    #[serde(default)]
    pub fill: Option<FillRule>,
    #[serde(default)]
    pub branch_prompts: Option<[BranchPrompt; 3]>,
    #[serde(default)]
    pub masked_attention: Option<bool>,
    #[serde(default)]
    pub branches_12: Option<bool>,
    #[serde(default)]
    pub branch3_substitution: Option<bool>,
    #[serde(default)]
    pub adaptive_low: Option<bool>,
    #[serde(default)]
    pub adaptive_mid: Option<bool>,
    #[serde(default)]
    pub low_band_donor: Option<LowBandDonor>,
    #[serde(default)]
    pub inversion_prompt: Option<BranchPrompt>,
    #[serde(default)]
    pub band: Option<BandThresholdParams>,
    #[serde(default)]
    pub fixed: Option<FixedThresholds>,
    /// Normally set from the top-level seed; accepted here so a resolved
    /// echo parses back as a draft (the top level wins when both exist).
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DraftSchedule {
    #[serde(default)]
    pub beta_start: Option<f64>,
    #[serde(default)]
    pub beta_end: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DraftMetrics {
    #[serde(default)]
    pub peak: Option<f64>,
    #[serde(default)]
    pub image_scale: Option<f64>,
    #[serde(default)]
    pub image_offset: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DraftConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub emit_trajectory: Option<bool>,
    #[serde(default)]
    pub pipeline: Option<DraftPipeline>,
    #[serde(default)]
    pub schedule: Option<DraftSchedule>,
    pub model: ModelSpec,
    #[serde(default)]
    pub input: Option<InputSpec>,
    #[serde(default)]
    pub mask: Option<MaskSpec>,
    #[serde(default)]
    pub prompt: Option<PromptConfig>,
    #[serde(default)]
    pub metrics: Option<DraftMetrics>,
}

pub fn parse_draft(json: &str) -> Result<DraftConfig> {
    serde_json::from_str(json).map_err(|e| Error::json("experiment config", e))
}

/// Reads a draft config and rewrites its relative model/input/mask paths
/// against the config file's directory, so configs are location-independent.
pub fn load_config(path: &Path) -> Result<DraftConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut draft = parse_draft(&text)?;
    let base = match path.parent() {
        Some(parent) if parent != Path::new("") => {
            parent.canonicalize().map_err(|e| Error::io(parent, e))?
        }
        _ => std::env::current_dir().map_err(|e| Error::io(".", e))?,
    };
    let rebase = |p: &mut Option<PathBuf>| {
        if let Some(path) = p {
            if path.is_relative() {
                *path = base.join(&path);
            }
        }
    };
    rebase(&mut draft.model.path);
    if let Some(input) = &mut draft.input {
        rebase(&mut input.file);
    }
    if let Some(mask) = &mut draft.mask {
        rebase(&mut mask.path);
    }
    Ok(draft)
}

/// Fully-materialized experiment description: every default filled in, so
/// serializing and re-running it reproduces the original run byte for byte.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub emit_trajectory: bool,
    pub pipeline: PipelineConfig,
    pub schedule: ScheduleConfig,
    pub model: ModelSpec,
    pub input: InputSpec,
    pub mask: MaskSpec,
    pub prompt: Option<PromptConfig>,
    pub metrics: MetricParams,
}

impl ResolvedConfig {
    pub fn to_json(&self) -> Result<String> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::json("resolved config", e))?;
        Ok(text + "\n")
    }
}

/// Fills every optional field with its default and validates the result.
/// The model is loaded here (its dimensions feed the band defaults and the
/// prompt/input checks) and discarded; runs load it again on demand.
pub fn resolve(draft: DraftConfig) -> Result<ResolvedConfig> {
    let model = load_model(&draft.model)?;
    let (_, height, width) = model.dims();

    let pipe = draft.pipeline.unwrap_or_default();
    let seed = draft.seed.or(pipe.seed).unwrap_or(0);
    let steps = pipe.steps.unwrap_or(DEFAULT_STEPS);
    let defaults = PipelineConfig::default_for(steps, seed, height, width);
    let pipeline = PipelineConfig {
        steps,
        lambda: pipe.lambda.unwrap_or(defaults.lambda),
        sampler: pipe.sampler.unwrap_or(defaults.sampler),
        gt_source: pipe.gt_source.unwrap_or(defaults.gt_source),
        fill: pipe.fill.unwrap_or(defaults.fill),
        branch_prompts: pipe.branch_prompts.unwrap_or(defaults.branch_prompts),
        masked_attention: pipe.masked_attention.unwrap_or(defaults.masked_attention),
        branches_12: pipe.branches_12.unwrap_or(defaults.branches_12),
        branch3_substitution: pipe
            .branch3_substitution
            .unwrap_or(defaults.branch3_substitution),
        adaptive_low: pipe.adaptive_low.unwrap_or(defaults.adaptive_low),
        adaptive_mid: pipe.adaptive_mid.unwrap_or(defaults.adaptive_mid),
        low_band_donor: pipe.low_band_donor.unwrap_or(defaults.low_band_donor),
        inversion_prompt: pipe.inversion_prompt.unwrap_or(defaults.inversion_prompt),
        band: pipe.band.unwrap_or(defaults.band),
        fixed: pipe.fixed,
        seed,
    };
    pipeline.validate(height, width)?;

    let sched = draft.schedule.unwrap_or_default();
    let schedule = ScheduleConfig {
        beta_start: sched.beta_start.unwrap_or(DEFAULT_BETA_START),
        beta_end: sched.beta_end.unwrap_or(DEFAULT_BETA_END),
    };
    make_schedule(steps, schedule.beta_start, schedule.beta_end)?;

    let input = resolve_input(draft.input.unwrap_or_default())?;
    let mask = resolve_mask(draft.mask.unwrap_or_default())?;

    if let Some(prompt) = &draft.prompt {
        model.selected(&PromptSpec::Conditioned {
            selector: prompt.selector.clone(),
            reweight: prompt.reweight.clone(),
        })?;
    }
    if let Some(component) = input.component {
        if component >= model.component_count() {
            return Err(Error::InvalidConfig(format!(
                "input component {component} out of range for a {}-component model",
                model.component_count()
            )));
        }
    }

    let m = draft.metrics.unwrap_or_default();
    let metric_defaults = MetricParams::default();
    let metrics = MetricParams {
        peak: m.peak.unwrap_or(metric_defaults.peak),
        image_scale: m.image_scale.unwrap_or(metric_defaults.image_scale),
        image_offset: m.image_offset.unwrap_or(metric_defaults.image_offset),
    };
    metrics.validate()?;

    let output_dir = draft.output_dir.ok_or_else(|| {
        Error::InvalidConfig("output_dir is required (config field, --out, or NTN_OUT)".into())
    })?;

    Ok(ResolvedConfig {
        seed,
        output_dir,
        emit_trajectory: draft.emit_trajectory.unwrap_or(false),
        pipeline,
        schedule,
        model: draft.model,
        input,
        mask,
        prompt: draft.prompt,
        metrics,
    })
}

fn resolve_input(input: InputSpec) -> Result<InputSpec> {
    if input.file.is_some() {
        if input.component.is_some() || input.jitter.is_some() {
            return Err(Error::InvalidConfig(
                "input file is exclusive with component/jitter".into(),
            ));
        }
        return Ok(input);
    }
    let jitter = input.jitter.unwrap_or(1.0);
    if !jitter.is_finite() || jitter < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "input jitter must be a finite non-negative real, got {jitter}"
        )));
    }
    Ok(InputSpec {
        component: Some(input.component.unwrap_or(0)),
        jitter: Some(jitter),
        file: None,
    })
}

fn resolve_mask(mask: MaskSpec) -> Result<MaskSpec> {
    match mask.shape {
        MaskShape::Square => {
            if mask.path.is_some() {
                return Err(Error::InvalidConfig("square mask takes no path".into()));
            }
            let coverage = mask.coverage.unwrap_or(0.25);
            if !(0.0..=1.0).contains(&coverage) || !coverage.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "mask coverage must lie in [0, 1], got {coverage}"
                )));
            }
            let scale = check_scale(mask.scale)?;
            Ok(MaskSpec {
                shape: MaskShape::Square,
                coverage: Some(coverage),
                position: Some(mask.position.unwrap_or(MaskPosition::Center)),
                scale: Some(scale),
                path: None,
            })
        }
        MaskShape::Half => {
            if mask.coverage.is_some() || mask.position.is_some() || mask.path.is_some() {
                return Err(Error::InvalidConfig(
                    "half mask takes only an optional scale".into(),
                ));
            }
            let scale = check_scale(mask.scale)?;
            Ok(MaskSpec { shape: MaskShape::Half, coverage: None, position: None, scale: Some(scale), path: None })
        }
        MaskShape::CustomFile => {
            if mask.coverage.is_some() || mask.position.is_some() || mask.scale.is_some() {
                return Err(Error::InvalidConfig(
                    "custom-file mask takes only a path".into(),
                ));
            }
            if mask.path.is_none() {
                return Err(Error::InvalidConfig("custom-file mask needs a path".into()));
            }
            Ok(mask)
        }
    }
}

fn check_scale(scale: Option<usize>) -> Result<usize> {
    let scale = scale.unwrap_or(DEFAULT_MASK_SCALE);
    if scale == 0 {
        return Err(Error::InvalidConfig("mask scale must be at least 1".into()));
    }
    Ok(scale)
}

/// Materializes the full-resolution region mask for a latent of the given
/// dimensions.
pub fn build_mask(spec: &MaskSpec, latent_height: usize, latent_width: usize) -> Result<RegionMask> {
    match spec.shape {
        MaskShape::Square => {
            let scale = spec.scale.unwrap_or(DEFAULT_MASK_SCALE);
            let (h, w) = (latent_height * scale, latent_width * scale);
            let coverage = spec.coverage.unwrap_or(0.25);
            let side = ((coverage * (h * w) as f64).sqrt().round() as usize).min(h).min(w);
            let (top, left) = match spec.position.unwrap_or(MaskPosition::Center) {
                MaskPosition::Center => ((h - side) / 2, (w - side) / 2),
                MaskPosition::TopLeft => (0, 0),
                MaskPosition::TopRight => (0, w - side),
                MaskPosition::BottomLeft => (h - side, 0),
                MaskPosition::BottomRight => (h - side, w - side),
            };
            let mut bits = Array2::<u8>::ones((h, w));
            for r in top..top + side {
                for c in left..left + side {
                    bits[[r, c]] = 0;
                }
            }
            RegionMask::new(bits)
        }
        MaskShape::Half => {
            let scale = spec.scale.unwrap_or(DEFAULT_MASK_SCALE);
            let (h, w) = (latent_height * scale, latent_width * scale);
            let mut bits = Array2::<u8>::ones((h, w));
            for r in 0..h {
                for c in 0..w / 2 {
                    bits[[r, c]] = 0;
                }
            }
            RegionMask::new(bits)
        }
        MaskShape::CustomFile => {
            let path = spec
                .path
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("custom-file mask needs a path".into()))?;
            let pixels = read_pgm(path)?;
            RegionMask::new(pixels.mapv(|v| u8::from(v >= 128)))
        }
    }
}

/// Materializes the input latent: a jittered component draw from the
/// dedicated input stream, or a snapshot file (validated against the model
/// dimensions).
pub fn build_input(config: &ResolvedConfig, model: &GmmModel) -> Result<LatentGrid> {
    let (c, h, w) = model.dims();
    if let Some(path) = &config.input.file {
        let grid = read_snapshot(path)?;
        if grid.dims() != (c, h, w) {
            let (gc, gh, gw) = grid.dims();
            return Err(Error::InvalidConfig(format!(
                "input file is {gc}x{gh}x{gw} but the model is {c}x{h}x{w}"
            )));
        }
        return Ok(grid);
    }
    let component = config.input.component.unwrap_or(0);
    let jitter = config.input.jitter.unwrap_or(1.0);
    if component >= model.component_count() {
        return Err(Error::InvalidConfig(format!(
            "input component {component} out of range for a {}-component model",
            model.component_count()
        )));
    }
    let mut rng = stream_rng(config.seed, STREAM_INPUT);
    let noise = LatentGrid::standard_normal(c, h, w, &mut rng)?;
    model.means()[component].affine_sum(1.0, &noise, jitter * model.sigma())
}

/// One finished run with everything the aggregating commands consume.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub output_dir: PathBuf,
    pub output: LatentGrid,
    pub report: MetricReport,
    pub trace: RunTrace,
}

/// Runs the resolved experiment and writes the artifact set: result.bin,
/// preview.pgm, metrics.csv, metrics.json, trace.json, resolved.json and
/// (opted in) trajectory/. `baseline` switches the sampler to the
/// blended-latent baseline instead of the three-branch pipeline.
pub fn run_experiment(config: &ResolvedConfig, baseline: bool) -> Result<RunArtifacts> {
    let model = load_model(&config.model)?;
    let (_, h, w) = model.dims();
    let schedule: NoiseSchedule =
        make_schedule(config.pipeline.steps, config.schedule.beta_start, config.schedule.beta_end)?;
    let input = build_input(config, &model)?;
    let mask = build_mask(&config.mask, h, w)?;
    let prompt = PromptConfig::to_prompt(&config.prompt);
    let denoiser = GmmDenoiser::new(model, schedule.clone());

    let run: RunOutput = if baseline {
        run_baseline_bld(&input, &mask, &prompt, &config.pipeline, &denoiser, &schedule)?
    } else {
        run_ntn(&input, &mask, &prompt, &config.pipeline, &denoiser, &schedule)?
    };

    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_snapshot(&dir.join("result.bin"), &run.output)?;

    let gray = latent_to_gray(&run.output, config.metrics.image_scale, config.metrics.image_offset);
    write_pgm(&dir.join("preview.pgm"), &gray.as_array().index_axis(Axis(0), 0).to_owned())?;

    let thresholds = config.pipeline.resolve_thresholds(&mask)?;
    let bands = report_bands(h, w, thresholds.th_lp, thresholds.th_mp1, thresholds.th_mp2)?;
    let reference = &run.log.gt[0];
    let mut report = trajectory_report(&run.log.zin, &bands, Some(reference), &config.metrics)?;
    let m_z = mask.downsample(h, w)?;
    let final_step = run.log.zin.len() - 1;
    report
        .rows
        .extend(masked_unmasked_rows(final_step, &run.output, reference, &m_z, &config.metrics)?);
    report.write_csv(&dir.join("metrics.csv"))?;
    report.write_json(&dir.join("metrics.json"))?;

    let trace_json = serde_json::to_string_pretty(&run.trace)
        .map_err(|e| Error::json("run trace", e))?;
    fs::write(dir.join("trace.json"), trace_json + "\n").map_err(|e| Error::io(dir, e))?;
    fs::write(dir.join("resolved.json"), config.to_json()?).map_err(|e| Error::io(dir, e))?;

    if config.emit_trajectory {
        run.log.write_dir(&dir.join("trajectory"))?;
    }

    Ok(RunArtifacts {
        output_dir: dir.clone(),
        output: run.output,
        report,
        trace: run.trace,
    })
}

/// Ablation variants: pipeline toggles plus the blended-latent baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    CaseA,
    CaseB,
    CaseC,
    Ttn,
    Ntt,
    Ttt,
    CaseI,
    CaseII,
    CaseIII,
    BaselineBld,
}

pub const VARIANT_NAMES: &str =
    "caseA, caseB, caseC, TTN, NTT, TTT, caseI, caseII, caseIII, baseline-bld";

impl Variant {
    pub fn parse(name: &str) -> Result<Variant> {
        Ok(match name.to_ascii_lowercase().as_str() {
            "casea" => Variant::CaseA,
            "caseb" => Variant::CaseB,
            "casec" => Variant::CaseC,
            "ttn" => Variant::Ttn,
            "ntt" => Variant::Ntt,
            "ttt" => Variant::Ttt,
            "casei" => Variant::CaseI,
            "caseii" => Variant::CaseII,
            "caseiii" => Variant::CaseIII,
            "baseline-bld" => Variant::BaselineBld,
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "unknown variant {name:?}; valid variants: {VARIANT_NAMES}"
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::CaseA => "caseA",
            Variant::CaseB => "caseB",
            Variant::CaseC => "caseC",
            Variant::Ttn => "TTN",
            Variant::Ntt => "NTT",
            Variant::Ttt => "TTT",
            Variant::CaseI => "caseI",
            Variant::CaseII => "caseII",
            Variant::CaseIII => "caseIII",
            Variant::BaselineBld => "baseline-bld",
        }
    }

    pub fn is_baseline(self) -> bool {
        self == Variant::BaselineBld
    }

    /// Applies the variant's toggles to a full-pipeline configuration.
    pub fn apply(self, cfg: &mut PipelineConfig) {
        match self {
            Variant::CaseA => cfg.masked_attention = false,
            Variant::CaseB => cfg.branches_12 = false,
            Variant::CaseC => cfg.branch3_substitution = false,
            Variant::Ttn => {
                cfg.branch_prompts = [BranchPrompt::Text, BranchPrompt::Text, BranchPrompt::Null]
            }
            Variant::Ntt => {
                cfg.branch_prompts = [BranchPrompt::Null, BranchPrompt::Text, BranchPrompt::Text]
            }
            Variant::Ttt => {
                cfg.branch_prompts = [BranchPrompt::Text, BranchPrompt::Text, BranchPrompt::Text]
            }
            Variant::CaseI => {
                cfg.adaptive_low = false;
                cfg.adaptive_mid = false;
            }
            Variant::CaseII => cfg.adaptive_mid = false,
            Variant::CaseIII => cfg.adaptive_low = false,
            Variant::BaselineBld => {}
        }
    }
}

fn final_step_rows(report: &MetricReport) -> Vec<&MetricRow> {
    let last = report.rows.iter().map(|r| r.step).max().unwrap_or(0);
    report.rows.iter().filter(|r| r.step == last).collect()
}

/// One run per lambda in its own `lambda_<value>` subdirectory, plus a
/// summary CSV (`lambda,metric,scope,value`) of every run's final-step
/// rows, in the given lambda order.
pub fn cmd_sweep_lambda(config: &ResolvedConfig, lambdas: &[f64]) -> Result<PathBuf> {
    if lambdas.is_empty() {
        return Err(Error::InvalidConfig("lambda sweep needs at least one value".into()));
    }
    for &lambda in lambdas {
        if !lambda.is_finite() || lambda <= 0.0 || lambda >= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "sweep lambda {lambda} outside (0, 1)"
            )));
        }
    }
    let mut summary = String::from("lambda,metric,scope,value\n");
    for &lambda in lambdas {
        let mut sub = config.clone();
        sub.pipeline.lambda = lambda;
        sub.output_dir = config.output_dir.join(format!("lambda_{lambda}"));
        let artifacts = run_experiment(&sub, false)?;
        for row in final_step_rows(&artifacts.report) {
            summary.push_str(&format!("{lambda},{},{},{}\n", row.metric, row.scope, row.value));
        }
    }
    let path = config.output_dir.join("summary.csv");
    fs::write(&path, summary).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// The unablated run and the variant run side by side, plus a paired CSV
/// (`metric,scope,base,variant`) of their final-step rows.
pub fn cmd_ablate(config: &ResolvedConfig, variant: Variant) -> Result<PathBuf> {
    let mut base = config.clone();
    base.output_dir = config.output_dir.join("base");
    let base_art = run_experiment(&base, false)?;

    let mut ablated = config.clone();
    ablated.output_dir = config.output_dir.join(variant.name());
    variant.apply(&mut ablated.pipeline);
    let variant_art = run_experiment(&ablated, variant.is_baseline())?;

    let variant_rows = final_step_rows(&variant_art.report);
    let mut paired = String::from("metric,scope,base,variant\n");
    for base_row in final_step_rows(&base_art.report) {
        let matching = variant_rows
            .iter()
            .find(|r| r.metric == base_row.metric && r.scope == base_row.scope);
        if let Some(variant_row) = matching {
            paired.push_str(&format!(
                "{},{},{},{}\n",
                base_row.metric, base_row.scope, base_row.value, variant_row.value
            ));
        }
    }
    let path = config.output_dir.join("paired.csv");
    fs::write(&path, paired).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Frequency diagnostics over a directory of step snapshots (`*.bin`,
/// lexicographic order): the trajectory report with the ratio-0 default
/// bands, written as CSV next to the snapshots unless an explicit output
/// path is given.
pub fn cmd_diagnose(dir: &Path, out: Option<&Path>, params: &MetricParams) -> Result<PathBuf> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|ext| ext == "bin"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no .bin snapshots in {}",
            dir.display()
        )));
    }
    let frames = paths.iter().map(|p| read_snapshot(p)).collect::<Result<Vec<_>>>()?;
    let (_, h, w) = frames[0].dims();
    let defaults = BandThresholdParams::defaults_for(h, w);
    let bands = report_bands(h, w, defaults.lam_f_lp, defaults.lam_f_mp1, defaults.lam_f_mp2)?;
    let report = trajectory_report(&frames, &bands, None, params)?;
    let out = out.map_or_else(|| dir.join("diagnostics.csv"), Path::to_path_buf);
    report.write_csv(&out)?;
    Ok(out)
}

/// Writes the two committed testbed models as JSON documents.
pub fn cmd_make_testbed(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, model) in [
        ("two_component.json", testbed::two_component()),
        ("five_component_texture.json", testbed::five_component_texture()),
    ] {
        let text = serde_json::to_string_pretty(&model)
            .map_err(|e| Error::json("testbed model", e))?;
        let path = dir.join(name);
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
