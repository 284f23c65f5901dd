//! Masked self-attention and a toy attention denoiser. The attention stage
//! zeroes masked token rows before the key projection only — queries and
//! values always see the full feature matrix — so masked positions cannot
//! be attended to but still attend outward. The toy denoiser wraps that
//! stage in a minimal embed/attend/project network with frozen seeded
//! weights; it exists to exercise the masked-attention path inside a real
//! denoising loop, not to produce good samples.

use crate::diffusion::{check_step, Denoiser, PromptSpec};
use crate::error::{Error, Result};
use crate::grid::{LatentGrid, RegionMask};
use crate::schedule::NoiseSchedule;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// One attention layer's projection matrices, all of shape d_in x d_out.
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    w_q: Array2<f64>,
    w_k: Array2<f64>,
    w_v: Array2<f64>,
}

impl AttentionWeights {
    pub fn new(w_q: Array2<f64>, w_k: Array2<f64>, w_v: Array2<f64>) -> Result<Self> {
        if w_q.nrows() == 0 || w_q.ncols() == 0 {
            return Err(Error::InvalidShape("projection matrices must be nonempty".into()));
        }
        for (name, m) in [("W_Q", &w_q), ("W_K", &w_k), ("W_V", &w_v)] {
            if m.dim() != w_q.dim() {
                return Err(Error::InvalidShape(format!(
                    "{name} has shape {:?}, expected {:?}",
                    m.dim(),
                    w_q.dim()
                )));
            }
            if !m.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("{name} contains non-finite entries")));
            }
        }
        Ok(Self { w_q, w_k, w_v })
    }

    /// Frozen pseudo-random weights, entries N(0, 1/d_in).
    pub fn seeded<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w_q: seeded_matrix(d_in, d_out, rng),
            w_k: seeded_matrix(d_in, d_out, rng),
            w_v: seeded_matrix(d_in, d_out, rng),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w_q.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w_q.ncols()
    }
}

fn seeded_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let scale = 1.0 / (rows as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| {
        let g: f64 = rng.sample(StandardNormal);
        g * scale
    })
}

fn check_attention_inputs(f: &Array2<f64>, m: &[u8], weights: &AttentionWeights) -> Result<()> {
    if m.len() != f.nrows() {
        return Err(Error::InvalidShape(format!(
            "mask has {} entries for {} tokens",
            m.len(),
            f.nrows()
        )));
    }
    if m.iter().any(|&b| b > 1) {
        return Err(Error::InvalidShape("token mask entries must be 0 or 1".into()));
    }
    if f.ncols() != weights.input_dim() {
        return Err(Error::InvalidShape(format!(
            "tokens have dimension {}, projections expect {}",
            f.ncols(),
            weights.input_dim()
        )));
    }
    Ok(())
}

fn masked_rows(f: &Array2<f64>, m: &[u8]) -> Array2<f64> {
    let mut out = f.clone();
    for (i, &bit) in m.iter().enumerate() {
        if bit == 0 {
            out.row_mut(i).fill(0.0);
        }
    }
    out
}

/// Pre-softmax attention logits (F W_Q)((F (.) m) W_K)^T / sqrt(d_in).
/// Columns belonging to masked tokens are exactly zero: their key rows are
/// zeroed before projection, so the dot products vanish identically.
pub fn attention_logits(
    f: &Array2<f64>,
    m: &[u8],
    weights: &AttentionWeights,
) -> Result<Array2<f64>> {
    check_attention_inputs(f, m, weights)?;
    let queries = f.dot(&weights.w_q);
    let keys = masked_rows(f, m).dot(&weights.w_k);
    let scale = 1.0 / (weights.input_dim() as f64).sqrt();
    Ok(queries.dot(&keys.t()) * scale)
}

/// Masked self-attention over token rows:
/// softmax((F W_Q)((F (.) m) W_K)^T / sqrt(d_in)) (F W_V), with m = 1 on
/// unmasked tokens. Only the key path sees the zeroed rows; the zero logits
/// of masked columns still receive ordinary softmax mass.
pub fn masked_self_attention(
    f: &Array2<f64>,
    m: &[u8],
    weights: &AttentionWeights,
) -> Result<Array2<f64>> {
    let mut logits = attention_logits(f, m, weights)?;
    for mut row in logits.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    let values = f.dot(&weights.w_v);
    Ok(logits.dot(&values))
}

/// A two-layer denoiser around the masked-attention stage: tokens are the
/// h*w latent cells with channel values as features, passed through linear
/// embed -> masked self-attention -> linear project, then scaled by
/// sqrt(1 - abar_t). Conditioning has no semantic content here; it enters
/// as a deterministic scalar gain so prompted and unprompted calls differ.
#[derive(Debug, Clone)]
pub struct ToyAttentionDenoiser {
    w_embed: Array2<f64>,
    attention: AttentionWeights,
    w_project: Array2<f64>,
    sched: NoiseSchedule,
}

impl ToyAttentionDenoiser {
    /// All weights drawn from one ChaCha stream in a fixed order, so a seed
    /// pins the network exactly.
    pub fn seeded(
        channels: usize,
        embed_dim: usize,
        sched: NoiseSchedule,
        seed: u64,
    ) -> Result<Self> {
        if channels == 0 || embed_dim == 0 {
            return Err(Error::InvalidShape("channels and embed_dim must be nonzero".into()));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let w_embed = seeded_matrix(channels, embed_dim, &mut rng);
        let attention = AttentionWeights::seeded(embed_dim, embed_dim, &mut rng)?;
        let w_project = seeded_matrix(embed_dim, channels, &mut rng);
        Ok(Self { w_embed, attention, w_project, sched })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    fn prompt_gain(prompt: &PromptSpec) -> f64 {
        match prompt {
            PromptSpec::NullText => 1.0,
            PromptSpec::Conditioned { selector, .. } => 1.0 + 0.1 * selector.len() as f64,
        }
    }

    fn forward(&self, z_t: &LatentGrid, t: usize, prompt: &PromptSpec, m: &[u8]) -> Result<LatentGrid> {
        check_step(t, 1, self.sched.steps())?;
        let (c, h, w) = z_t.dims();
        if c != self.w_embed.nrows() {
            return Err(Error::InvalidShape(format!(
                "denoiser built for {} channels, got {c}",
                self.w_embed.nrows()
            )));
        }
        let n = h * w;
        let tokens = Array2::from_shape_fn((n, c), |(i, ch)| {
            z_t.as_array()[[ch, i / w, i % w]]
        });
        let embedded = tokens.dot(&self.w_embed);
        let attended = masked_self_attention(&embedded, m, &self.attention)?;
        let projected = attended.dot(&self.w_project);
        let gain = self.sched.sqrt_one_minus_alpha_bar(t) * Self::prompt_gain(prompt);
        let mut out = LatentGrid::zeros(c, h, w)?;
        for ((ch, r, col), v) in out.as_array_mut().indexed_iter_mut() {
            *v = gain * projected[[r * w + col, ch]];
        }
        Ok(out)
    }
}

impl Denoiser for ToyAttentionDenoiser {
    fn predict_noise(&self, z_t: &LatentGrid, t: usize, prompt: &PromptSpec) -> Result<LatentGrid> {
        let n = z_t.height() * z_t.width();
        self.forward(z_t, t, prompt, &vec![1u8; n])
    }

    /// The region mask is resampled to the latent resolution and flattened
    /// row-major into the token mask.
    fn predict_noise_masked(
        &self,
        z_t: &LatentGrid,
        t: usize,
        prompt: &PromptSpec,
        mask: &RegionMask,
    ) -> Result<LatentGrid> {
        let (_, h, w) = z_t.dims();
        let m = mask.downsample(h, w)?;
        let flat: Vec<u8> = m.iter().copied().collect();
        self.forward(z_t, t, prompt, &flat)
    }
}
