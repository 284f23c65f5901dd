//! Reference-based quality metrics (MSE / PSNR / SSIM), image-space
//! trajectory statistics (means, gradient, variance, LBP variance), and
//! per-band spectral energy. All functions are pure; reports are plain
//! value objects with a fixed CSV row order so identical runs serialize
//! byte for byte.

use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::spectral::{dct2, BandMask};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::path::Path;

/// Default dynamic range for latent-space PSNR/SSIM: the span of latent
/// values the preview mapping can represent without clamping.
pub const DEFAULT_PEAK: f64 = 8.0;
/// Default latent-to-grayscale affine map: [-4, 4] onto [0, 255].
pub const DEFAULT_IMAGE_SCALE: f64 = 31.875;
pub const DEFAULT_IMAGE_OFFSET: f64 = 127.5;

/// Which cells of a masked comparison participate in a metric.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Global,
    /// Cells the mask hides (bit 0) — the inpainted region.
    Masked,
    /// Cells the mask keeps (bit 1).
    Unmasked,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Global => "global",
            Scope::Masked => "masked",
            Scope::Unmasked => "unmasked",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Include map for a scope over a 0/1 latent mask: 1 where the cell
/// participates.
pub fn scope_cells(m_z: &Array2<u8>, scope: Scope) -> Array2<u8> {
    m_z.mapv(|bit| match scope {
        Scope::Global => 1,
        Scope::Masked => 1 - bit,
        Scope::Unmasked => bit,
    })
}

fn check_include(grid: &LatentGrid, include: Option<&Array2<u8>>) -> Result<usize> {
    let (_, h, w) = grid.dims();
    match include {
        None => Ok(h * w),
        Some(map) => {
            if map.dim() != (h, w) {
                return Err(Error::InvalidShape(format!(
                    "scope map {}x{} does not match grid {h}x{w}",
                    map.nrows(),
                    map.ncols()
                )));
            }
            let count = map.iter().filter(|&&b| b == 1).count();
            if count == 0 {
                return Err(Error::InvalidShape("scope selects no cells".into()));
            }
            Ok(count)
        }
    }
}

/// Mean squared difference over the scoped cells of every channel.
pub fn mse(a: &LatentGrid, b: &LatentGrid, include: Option<&Array2<u8>>) -> Result<f64> {
    a.check_same_dims(b, "mse")?;
    let cells = check_include(a, include)?;
    let (c, h, w) = a.dims();
    let mut sum = 0.0;
    for ch in 0..c {
        for r in 0..h {
            for col in 0..w {
                if include.is_none_or(|m| m[[r, col]] == 1) {
                    let d = a.as_array()[[ch, r, col]] - b.as_array()[[ch, r, col]];
                    sum += d * d;
                }
            }
        }
    }
    Ok(sum / (c * cells) as f64)
}

/// Peak signal-to-noise ratio in dB; a zero MSE reports the 99.0 dB
/// sentinel (documented cap) rather than infinity.
pub fn psnr(
    a: &LatentGrid,
    b: &LatentGrid,
    peak: f64,
    include: Option<&Array2<u8>>,
) -> Result<f64> {
    check_peak(peak)?;
    let err = mse(a, b, include)?;
    if err == 0.0 {
        return Ok(99.0);
    }
    Ok(10.0 * (peak * peak / err).log10())
}

fn check_peak(peak: f64) -> Result<()> {
    if !peak.is_finite() || peak <= 0.0 {
        return Err(Error::InvalidConfig(format!("peak must be a positive real, got {peak}")));
    }
    Ok(())
}

/// Normalized k x k Gaussian window, sigma = 1.5, centered.
fn gaussian_window(k: usize) -> Array2<f64> {
    let center = (k - 1) as f64 / 2.0;
    let mut win = Array2::from_shape_fn((k, k), |(i, j)| {
        let di = i as f64 - center;
        let dj = j as f64 - center;
        (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp()
    });
    let total: f64 = win.iter().sum();
    win.mapv_inplace(|v| v / total);
    win
}

/// Mean local SSIM over valid window positions, averaged across channels.
/// The window is 11x11 (Gaussian, sigma 1.5) shrunk to the largest odd size
/// fitting the grid; stabilizers are C1=(0.01 peak)^2, C2=(0.03 peak)^2. A
/// scope map selects windows by their center cell.
pub fn ssim(
    a: &LatentGrid,
    b: &LatentGrid,
    peak: f64,
    include: Option<&Array2<u8>>,
) -> Result<f64> {
    a.check_same_dims(b, "ssim")?;
    check_peak(peak)?;
    check_include(a, include)?;
    let (channels, h, w) = a.dims();
    let mut k = 11.min(h).min(w);
    if k % 2 == 0 {
        k -= 1;
    }
    let win = gaussian_window(k);
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let half = (k - 1) / 2;

    let mut total = 0.0;
    for ch in 0..channels {
        let mut sum = 0.0;
        let mut count = 0usize;
        for top in 0..=h - k {
            for left in 0..=w - k {
                if let Some(map) = include {
                    if map[[top + half, left + half]] == 0 {
                        continue;
                    }
                }
                let (mut mu_x, mut mu_y) = (0.0, 0.0);
                let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let wgt = win[[i, j]];
                        let x = a.as_array()[[ch, top + i, left + j]];
                        let y = b.as_array()[[ch, top + i, left + j]];
                        mu_x += wgt * x;
                        mu_y += wgt * y;
                        xx += wgt * x * x;
                        yy += wgt * y * y;
                        xy += wgt * x * y;
                    }
                }
                let var_x = xx - mu_x * mu_x;
                let var_y = yy - mu_y * mu_y;
                let cov = xy - mu_x * mu_y;
                sum += ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2))
                    / ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2));
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::InvalidShape("scope selects no ssim window centers".into()));
        }
        total += sum / count as f64;
    }
    Ok(total / channels as f64)
}

fn check_image_channels(img: &LatentGrid) -> Result<()> {
    let c = img.channels();
    if c != 1 && c != 3 {
        return Err(Error::InvalidShape(format!(
            "image metrics take 1- or 3-channel grids, got {c} channels"
        )));
    }
    Ok(())
}

fn pixel_mean(img: &LatentGrid, combine: impl Fn(f64, f64, f64) -> f64) -> Result<f64> {
    check_image_channels(img)?;
    let (c, h, w) = img.dims();
    let mut sum = 0.0;
    for r in 0..h {
        for col in 0..w {
            sum += if c == 1 {
                img.as_array()[[0, r, col]]
            } else {
                combine(
                    img.as_array()[[0, r, col]],
                    img.as_array()[[1, r, col]],
                    img.as_array()[[2, r, col]],
                )
            };
        }
    }
    Ok(sum / (h * w) as f64)
}

/// Mean of (R+G+B)/3; grayscale passthrough for one channel.
pub fn mean_gray(img: &LatentGrid) -> Result<f64> {
    pixel_mean(img, |r, g, b| (r + g + b) / 3.0)
}

/// Mean of 0.299 R + 0.587 G + 0.114 B.
pub fn mean_luma(img: &LatentGrid) -> Result<f64> {
    pixel_mean(img, |r, g, b| 0.299 * r + 0.587 * g + 0.114 * b)
}

/// Mean of the per-pixel HSV value channel, max(R, G, B).
pub fn mean_hsv_v(img: &LatentGrid) -> Result<f64> {
    pixel_mean(img, |r, g, b| r.max(g).max(b))
}

/// Per-pixel grayscale plane: channel 0 as-is, or the (R+G+B)/3 average.
fn to_gray_plane(img: &LatentGrid) -> Result<Array2<f64>> {
    check_image_channels(img)?;
    let (c, h, w) = img.dims();
    Ok(Array2::from_shape_fn((h, w), |(r, col)| {
        if c == 1 {
            img.as_array()[[0, r, col]]
        } else {
            (img.as_array()[[0, r, col]]
                + img.as_array()[[1, r, col]]
                + img.as_array()[[2, r, col]])
                / 3.0
        }
    }))
}

/// Mean forward-difference gradient magnitude over interior pixels,
/// normalized by sqrt(2).
pub fn avg_gradient(img: &LatentGrid) -> Result<f64> {
    let gray = to_gray_plane(img)?;
    let (h, w) = gray.dim();
    if h < 2 || w < 2 {
        return Err(Error::InvalidShape(format!(
            "avg_gradient needs at least 2x2 pixels, got {h}x{w}"
        )));
    }
    let mut sum = 0.0;
    for r in 0..h - 1 {
        for c in 0..w - 1 {
            let gx = gray[[r, c + 1]] - gray[[r, c]];
            let gy = gray[[r + 1, c]] - gray[[r, c]];
            sum += (gx * gx + gy * gy).sqrt() / std::f64::consts::SQRT_2;
        }
    }
    Ok(sum / ((h - 1) * (w - 1)) as f64)
}

fn population_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
}

/// Population variance of the grayscale pixel values.
pub fn variance(img: &LatentGrid) -> Result<f64> {
    let gray = to_gray_plane(img)?;
    Ok(population_variance(gray.iter().copied()))
}

/// 8-neighbor LBP codes of the interior pixels: bits clockwise from the
/// top-left neighbor, most significant first, set when neighbor >= center.
fn lbp_codes(gray: &Array2<f64>) -> Result<Array2<f64>> {
    let (h, w) = gray.dim();
    if h < 3 || w < 3 {
        return Err(Error::InvalidShape(format!("lbp needs at least 3x3 pixels, got {h}x{w}")));
    }
    const NEIGHBORS: [(isize, isize); 8] =
        [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)];
    Ok(Array2::from_shape_fn((h - 2, w - 2), |(r, c)| {
        let (cr, cc) = (r + 1, c + 1);
        let center = gray[[cr, cc]];
        let mut code = 0u32;
        for (i, (dr, dc)) in NEIGHBORS.iter().enumerate() {
            let v = gray[[(cr as isize + dr) as usize, (cc as isize + dc) as usize]];
            if v >= center {
                code |= 1 << (7 - i);
            }
        }
        code as f64
    }))
}

/// Population variance of the 8-neighbor LBP code image.
pub fn lbp_variance(img: &LatentGrid) -> Result<f64> {
    let codes = lbp_codes(&to_gray_plane(img)?)?;
    Ok(population_variance(codes.iter().copied()))
}

/// Sum of squared DCT coefficients inside the band, over all channels.
pub fn band_energy(grid: &LatentGrid, band: &BandMask) -> Result<f64> {
    let (c, h, w) = grid.dims();
    if (band.height(), band.width()) != (h, w) {
        return Err(Error::InvalidShape(format!(
            "band mask {}x{} does not match grid {h}x{w}",
            band.height(),
            band.width()
        )));
    }
    let spec = dct2(grid);
    let mut sum = 0.0;
    for ch in 0..c {
        for x in 0..h {
            for y in 0..w {
                if band.bits()[[x, y]] == 1 {
                    let v = spec.as_array()[[ch, x, y]];
                    sum += v * v;
                }
            }
        }
    }
    Ok(sum)
}

/// Grayscale image of latent channel 0 under the affine map
/// clamp(scale*x + offset, 0, 255).
pub fn latent_to_gray(grid: &LatentGrid, scale: f64, offset: f64) -> LatentGrid {
    let (_, h, w) = grid.dims();
    let mut out = LatentGrid::zeros(1, h, w).expect("nonzero dims are preserved");
    for r in 0..h {
        for col in 0..w {
            let v = scale * grid.as_array()[[0, r, col]] + offset;
            out.as_array_mut()[[0, r, col]] = v.clamp(0.0, 255.0);
        }
    }
    out
}

/// Fixed knobs of a metric computation: the PSNR/SSIM dynamic range and
/// the latent-to-grayscale map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricParams {
    pub peak: f64,
    pub image_scale: f64,
    pub image_offset: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            peak: DEFAULT_PEAK,
            image_scale: DEFAULT_IMAGE_SCALE,
            image_offset: DEFAULT_IMAGE_OFFSET,
        }
    }
}

impl MetricParams {
    pub fn validate(&self) -> Result<()> {
        check_peak(self.peak)?;
        if !self.image_scale.is_finite() || !self.image_offset.is_finite() {
            return Err(Error::InvalidConfig("image map parameters must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub metric: String,
    pub scope: Scope,
    pub value: f64,
}

/// Rows keyed by (step, metric, scope). Builders emit steps ascending and,
/// within a step, the fixed metric order documented on `to_csv`; the CSV
/// serialization preserves row order so identical reports are bytewise
/// identical.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn push(&mut self, step: usize, metric: impl Into<String>, scope: Scope, value: f64) {
        self.rows.push(MetricRow { step, metric: metric.into(), scope, value });
    }

    /// CSV with header `step,metric,scope,value`. Within a step the metric
    /// order is: mean_gray, mean_hsv_v, mean_luma, avg_gradient, variance,
    /// lbp_variance, band_energy_<name> per band, then mse, psnr, ssim
    /// where a reference was available. Values use the shortest decimal
    /// form that parses back to the same float.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,metric,scope,value\n");
        for row in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", row.step, row.metric, row.scope, row.value));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::json("metric report", e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Named low / mid / high report bands for an h x w spectrum: x+y <= th_lp,
/// th_mp1 < x+y <= th_mp2, and x+y > th_mp2.
pub fn report_bands(
    height: usize,
    width: usize,
    th_lp: f64,
    th_mp1: f64,
    th_mp2: f64,
) -> Result<Vec<(String, BandMask)>> {
    let beyond = (height + width) as f64;
    Ok(vec![
        ("low".into(), crate::spectral::low_pass_mask(height, width, th_lp)?),
        ("mid".into(), crate::spectral::mid_pass_mask(height, width, th_mp1, th_mp2)?),
        ("high".into(), crate::spectral::mid_pass_mask(height, width, th_mp2, beyond)?),
    ])
}

/// Per-step statistics of a chronological trajectory: image-space means,
/// gradient, variance, LBP variance, per-band spectral energy, and — when
/// a reference latent is given — latent-space mse/psnr/ssim against it.
/// All rows are global-scope; step indices are positions in the slice.
pub fn trajectory_report(
    trajectory: &[LatentGrid],
    bands: &[(String, BandMask)],
    reference: Option<&LatentGrid>,
    params: &MetricParams,
) -> Result<MetricReport> {
    if trajectory.is_empty() {
        return Err(Error::InvalidShape("trajectory has no frames".into()));
    }
    params.validate()?;
    let first = &trajectory[0];
    let mut report = MetricReport::default();
    for (step, frame) in trajectory.iter().enumerate() {
        frame.check_same_dims(first, "trajectory frames")?;
        let img = latent_to_gray(frame, params.image_scale, params.image_offset);
        report.push(step, "mean_gray", Scope::Global, mean_gray(&img)?);
        report.push(step, "mean_hsv_v", Scope::Global, mean_hsv_v(&img)?);
        report.push(step, "mean_luma", Scope::Global, mean_luma(&img)?);
        report.push(step, "avg_gradient", Scope::Global, avg_gradient(&img)?);
        report.push(step, "variance", Scope::Global, variance(&img)?);
        report.push(step, "lbp_variance", Scope::Global, lbp_variance(&img)?);
        for (name, band) in bands {
            report.push(step, format!("band_energy_{name}"), Scope::Global, band_energy(frame, band)?);
        }
        if let Some(reference) = reference {
            report.push(step, "mse", Scope::Global, mse(frame, reference, None)?);
            report.push(step, "psnr", Scope::Global, psnr(frame, reference, params.peak, None)?);
            report.push(step, "ssim", Scope::Global, ssim(frame, reference, params.peak, None)?);
        }
    }
    for row in &report.rows {
        if !row.value.is_finite() {
            return Err(Error::NonFinite(format!(
                "metric {} at step {} evaluated to {}",
                row.metric, row.step, row.value
            )));
        }
    }
    Ok(report)
}

/// Masked- and unmasked-scope mse/psnr/ssim rows for one comparison (the
/// global rows come from the trajectory report). A scope absent from the
/// mask is skipped rather than an error.
pub fn masked_unmasked_rows(
    step: usize,
    a: &LatentGrid,
    reference: &LatentGrid,
    m_z: &Array2<u8>,
    params: &MetricParams,
) -> Result<Vec<MetricRow>> {
    params.validate()?;
    let mut rows = Vec::new();
    for scope in [Scope::Masked, Scope::Unmasked] {
        let include = scope_cells(m_z, scope);
        if include.iter().all(|&b| b == 0) {
            continue;
        }
        rows.push(MetricRow {
            step,
            metric: "mse".into(),
            scope,
            value: mse(a, reference, Some(&include))?,
        });
        rows.push(MetricRow {
            step,
            metric: "psnr".into(),
            scope,
            value: psnr(a, reference, params.peak, Some(&include))?,
        });
        // A scope can select cells yet contain no valid window center; the
        // row is omitted rather than failing the whole report.
        match ssim(a, reference, params.peak, Some(&include)) {
            Ok(value) => rows.push(MetricRow { step, metric: "ssim".into(), scope, value }),
            Err(Error::InvalidShape(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(rows)
}
