//! Orthonormal 2D DCT-II per channel, anti-diagonal frequency-band masks
//! with mask-adaptive thresholds, and the band-substitution kernel.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::grid::{LatentGrid, RegionMask};

/// DCT-II coefficients of a latent grid, same C x h x w layout. Index (x, y)
/// within a channel is the vertical/horizontal frequency pair; (0, 0) is DC.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralGrid {
    coefficients: Array3<f64>,
}

impl SpectralGrid {
    /// Builds a spectrum from explicit coefficients (synthesizing a latent
    /// with a prescribed band content via [`idct2`]).
    pub fn from_array(coefficients: Array3<f64>) -> Result<Self> {
        let (c, h, w) = coefficients.dim();
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidShape(format!(
                "spectral grid dimensions must be nonzero, got {c}x{h}x{w}"
            )));
        }
        if coefficients.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spectral coefficients".into()));
        }
        Ok(SpectralGrid { coefficients })
    }

    pub fn channels(&self) -> usize {
        self.coefficients.dim().0
    }

    pub fn height(&self) -> usize {
        self.coefficients.dim().1
    }

    pub fn width(&self) -> usize {
        self.coefficients.dim().2
    }

    pub fn as_array(&self) -> &Array3<f64> {
        &self.coefficients
    }
}

/// Orthonormal DCT-II basis: row k is the k-th basis vector, so B * B^T = I.
/// Overall scale sqrt(2/N) with 1/sqrt(2) on the zeroth row.
fn dct_basis(n: usize) -> Array2<f64> {
    let mut b = Array2::zeros((n, n));
    let scale = (2.0 / n as f64).sqrt();
    for k in 0..n {
        let ck = if k == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
        for j in 0..n {
            let angle = std::f64::consts::PI * (2.0 * j as f64 + 1.0) * k as f64 / (2.0 * n as f64);
            b[[k, j]] = scale * ck * angle.cos();
        }
    }
    b
}

/// Separable orthonormal 2D DCT-II applied independently to every channel.
pub fn dct2(grid: &LatentGrid) -> SpectralGrid {
    let (c, h, w) = grid.dims();
    let bh = dct_basis(h);
    let bw = dct_basis(w);
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        let x = grid.as_array().index_axis(ndarray::Axis(0), ci);
        let s = bh.dot(&x).dot(&bw.t());
        out.index_axis_mut(ndarray::Axis(0), ci).assign(&s);
    }
    SpectralGrid { coefficients: out }
}

/// Inverse of [`dct2`]; exact up to floating-point round-trip error.
pub fn idct2(spec: &SpectralGrid) -> LatentGrid {
    let (c, h, w) = spec.coefficients.dim();
    let bh = dct_basis(h);
    let bw = dct_basis(w);
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        let s = spec.coefficients.index_axis(ndarray::Axis(0), ci);
        let x = bh.t().dot(&s).dot(&bw);
        out.index_axis_mut(ndarray::Axis(0), ci).assign(&x);
    }
    LatentGrid::new(out).expect("spectral grid dimensions are nonzero by construction")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BandKind {
    /// Coefficients with x + y <= threshold.
    LowPass { threshold: f64 },
    /// Coefficients with lower < x + y <= upper.
    MidPass { lower: f64, upper: f64 },
}

/// Binary mask over spectral coefficients selecting an anti-diagonal band.
#[derive(Clone, Debug, PartialEq)]
pub struct BandMask {
    bits: Array2<u8>,
    kind: BandKind,
}

impl BandMask {
    pub fn bits(&self) -> &Array2<u8> {
        &self.bits
    }

    pub fn kind(&self) -> BandKind {
        self.kind
    }

    pub fn height(&self) -> usize {
        self.bits.dim().0
    }

    pub fn width(&self) -> usize {
        self.bits.dim().1
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.count_ones() == 0
    }

    /// Construct directly from explicit bits (diagnostic band shapes).
    pub fn from_bits(bits: Array2<u8>, kind: BandKind) -> Result<Self> {
        let (h, w) = bits.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidShape("band mask dimensions must be nonzero".into()));
        }
        if bits.iter().any(|&v| v > 1) {
            return Err(Error::InvalidShape("band mask values must be 0 or 1".into()));
        }
        Ok(BandMask { bits, kind })
    }
}

/// Low-pass band: bit set iff x + y <= threshold. A negative threshold
/// yields an empty band.
pub fn low_pass_mask(height: usize, width: usize, threshold: f64) -> Result<BandMask> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidShape("band mask dimensions must be nonzero".into()));
    }
    let mut bits = Array2::zeros((height, width));
    for x in 0..height {
        for y in 0..width {
            if (x + y) as f64 <= threshold {
                bits[[x, y]] = 1;
            }
        }
    }
    Ok(BandMask { bits, kind: BandKind::LowPass { threshold } })
}

/// Mid-pass band: bit set iff lower < x + y <= upper. Requires lower < upper.
pub fn mid_pass_mask(height: usize, width: usize, lower: f64, upper: f64) -> Result<BandMask> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidShape("band mask dimensions must be nonzero".into()));
    }
    if !(lower < upper) {
        return Err(Error::InvalidThreshold(format!(
            "mid-pass band requires lower < upper, got {lower} >= {upper}"
        )));
    }
    let mut bits = Array2::zeros((height, width));
    for x in 0..height {
        for y in 0..width {
            let s = (x + y) as f64;
            if lower < s && s <= upper {
                bits[[x, y]] = 1;
            }
        }
    }
    Ok(BandMask { bits, kind: BandKind::MidPass { lower, upper } })
}

/// Threshold parameters for the mask-adaptive bands. `lam_f_*` are fixed
/// offsets, `lam_r_*` scale with the unmasked ratio of the region mask.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandThresholdParams {
    pub lam_f_lp: f64,
    pub lam_r_lp: f64,
    pub lam_f_mp1: f64,
    pub lam_r_mp1: f64,
    pub lam_f_mp2: f64,
    pub lam_r_mp2: f64,
}

impl BandThresholdParams {
    /// Defaults expressed as fractions of the maximal anti-diagonal
    /// D = h + w - 2. Untuned reference values; every experiment config may
    /// override them.
    pub fn defaults_for(height: usize, width: usize) -> Self {
        let d = (height + width).saturating_sub(2) as f64;
        BandThresholdParams {
            lam_f_lp: 0.10 * d,
            lam_r_lp: 0.10 * d,
            lam_f_mp1: 0.15 * d,
            lam_r_mp1: 0.05 * d,
            lam_f_mp2: 0.50 * d,
            lam_r_mp2: 0.10 * d,
        }
    }

    /// Checks that every unmasked ratio in [0, 1] yields usable bands on an
    /// h x w spectrum: thresholds finite and nonnegative where required,
    /// mid band nonempty-ordered, and the upper mid threshold within D.
    pub fn validate_for(&self, height: usize, width: usize) -> Result<()> {
        let vals = [
            self.lam_f_lp,
            self.lam_r_lp,
            self.lam_f_mp1,
            self.lam_r_mp1,
            self.lam_f_mp2,
            self.lam_r_mp2,
        ];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidThreshold(
                "band threshold parameters must be finite and nonnegative".into(),
            ));
        }
        let d = (height + width).saturating_sub(2) as f64;
        // th_mp1 decreases and th_mp2 increases with the ratio, so the
        // ordering is tightest at ratio 0 and the bound at ratio 1.
        if !(self.lam_f_mp1 < self.lam_f_mp2) {
            return Err(Error::InvalidThreshold(format!(
                "mid band inverts at ratio 0: lam_f_mp1 {} >= lam_f_mp2 {}",
                self.lam_f_mp1, self.lam_f_mp2
            )));
        }
        if self.lam_f_mp2 + self.lam_r_mp2 > d {
            return Err(Error::InvalidThreshold(format!(
                "upper mid threshold exceeds the spectrum: {} > {d}",
                self.lam_f_mp2 + self.lam_r_mp2
            )));
        }
        Ok(())
    }
}

/// th_lp = lam_f_lp + lam_r_lp * unmasked_ratio: larger known regions admit
/// a wider low band.
pub fn adaptive_low_threshold(mask: &RegionMask, params: &BandThresholdParams) -> f64 {
    params.lam_f_lp + params.lam_r_lp * mask.unmasked_ratio()
}

/// (th_mp1, th_mp2) = (lam_f_mp1 - lam_r_mp1 * ratio, lam_f_mp2 + lam_r_mp2 * ratio).
/// The lower threshold is clamped at zero; the pair must stay ordered.
pub fn adaptive_mid_thresholds(
    mask: &RegionMask,
    params: &BandThresholdParams,
) -> Result<(f64, f64)> {
    let ratio = mask.unmasked_ratio();
    let th1 = (params.lam_f_mp1 - params.lam_r_mp1 * ratio).max(0.0);
    let th2 = params.lam_f_mp2 + params.lam_r_mp2 * ratio;
    if !(th1 < th2) {
        return Err(Error::InvalidThreshold(format!(
            "adaptive mid thresholds invert at ratio {ratio}: {th1} >= {th2}"
        )));
    }
    Ok((th1, th2))
}

/// Replaces the in-band spectral content of `recipient` with the donor's:
/// IDCT(DCT(donor) * band + DCT(recipient) * (1 - band)).
///
/// An empty band returns the recipient bit-for-bit (no transform round
/// trip), which downstream exact-equivalence contracts rely on.
pub fn substitute_band(
    donor: &LatentGrid,
    recipient: &LatentGrid,
    band: &BandMask,
) -> Result<LatentGrid> {
    donor.check_same_dims(recipient, "substitute_band")?;
    let (_, h, w) = donor.dims();
    if band.bits().dim() != (h, w) {
        return Err(Error::InvalidShape(format!(
            "band mask {}x{} does not match spatial dims {h}x{w}",
            band.height(),
            band.width()
        )));
    }
    if band.is_empty() {
        return Ok(recipient.clone());
    }
    let sd = dct2(donor);
    let sr = dct2(recipient);
    let (c, _, _) = donor.dims();
    let mut merged = Array3::zeros((c, h, w));
    for ci in 0..c {
        for x in 0..h {
            for y in 0..w {
                merged[[ci, x, y]] = if band.bits()[[x, y]] == 1 {
                    sd.as_array()[[ci, x, y]]
                } else {
                    sr.as_array()[[ci, x, y]]
                };
            }
        }
    }
    Ok(idct2(&SpectralGrid { coefficients: merged }))
}
