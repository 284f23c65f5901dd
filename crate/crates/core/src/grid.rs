//! Dense latent grids (channels x height x width, f64) and binary region
//! masks with nearest-neighbor downsampling to latent resolution.

use ndarray::{Array2, Array3, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A C x h x w grid of 64-bit floats. All spatial operations in this crate
/// act per channel. Dimensions are nonzero by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Vec<f64>>>", into = "Vec<Vec<Vec<f64>>>")]
pub struct LatentGrid {
    data: Array3<f64>,
}

impl LatentGrid {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidShape(format!(
                "latent grid dimensions must be nonzero, got {c}x{h}x{w}"
            )));
        }
        Ok(LatentGrid { data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(Array3::zeros((channels, height, width)))
    }

    pub fn from_shape_vec(
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let data = Array3::from_shape_vec((channels, height, width), values).map_err(|e| {
            Error::InvalidShape(format!("latent grid data does not fit {channels}x{height}x{width}: {e}"))
        })?;
        Self::new(data)
    }

    /// Draws every cell from the standard normal distribution.
    pub fn standard_normal<R: Rng + ?Sized>(
        channels: usize,
        height: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let n = channels * height * width;
        let values: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        Self::from_shape_vec(channels, height, width, values)
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn as_array(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn as_array_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn into_array(self) -> Array3<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Congruence check used by every binary grid operation.
    pub fn check_same_dims(&self, other: &Self, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::InvalidShape(format!(
                "{what}: dimensions differ, {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    /// Elementwise combination of two congruent grids.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_dims(other, "zip_map")?;
        let mut out = self.data.clone();
        Zip::from(&mut out).and(&other.data).for_each(|a, &b| *a = f(*a, b));
        LatentGrid::new(out)
    }

    /// a*self + b*other, congruence-checked.
    pub fn affine_sum(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    pub fn scale(&self, a: f64) -> Self {
        LatentGrid { data: &self.data * a }
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_same_dims(other, "max_abs_diff")?;
        let mut worst = 0.0f64;
        Zip::from(&self.data).and(&other.data).for_each(|&a, &b| {
            let d = (a - b).abs();
            if d > worst {
                worst = d;
            }
        });
        Ok(worst)
    }

    /// Bit-level equality, distinguishing signed zeros and NaN payloads.
    pub fn bits_equal(&self, other: &Self) -> bool {
        self.dims() == other.dims()
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl TryFrom<Vec<Vec<Vec<f64>>>> for LatentGrid {
    type Error = Error;

    fn try_from(v: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let c = v.len();
        let h = v.first().map_or(0, |ch| ch.len());
        let w = v.first().and_then(|ch| ch.first()).map_or(0, |row| row.len());
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidShape("latent grid literal is empty".into()));
        }
        let mut flat = Vec::with_capacity(c * h * w);
        for ch in &v {
            if ch.len() != h {
                return Err(Error::InvalidShape("latent grid literal is ragged across rows".into()));
            }
            for row in ch {
                if row.len() != w {
                    return Err(Error::InvalidShape("latent grid literal is ragged across columns".into()));
                }
                flat.extend_from_slice(row);
            }
        }
        LatentGrid::from_shape_vec(c, h, w, flat)
    }
}

impl From<LatentGrid> for Vec<Vec<Vec<f64>>> {
    fn from(g: LatentGrid) -> Self {
        let (c, h, w) = g.dims();
        (0..c)
            .map(|ci| {
                (0..h)
                    .map(|r| (0..w).map(|col| g.as_array()[[ci, r, col]]).collect())
                    .collect()
            })
            .collect()
    }
}

/// Binary inpainting mask at image resolution; 1 = unmasked (known region),
/// 0 = masked (region to synthesize).
#[derive(Clone, Debug, PartialEq)]
pub struct RegionMask {
    full: Array2<u8>,
}

impl RegionMask {
    pub fn new(full: Array2<u8>) -> Result<Self> {
        let (h, w) = full.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidShape("region mask dimensions must be nonzero".into()));
        }
        if full.iter().any(|&v| v > 1) {
            return Err(Error::InvalidShape("region mask values must be 0 or 1".into()));
        }
        Ok(RegionMask { full })
    }

    pub fn all_unmasked(height: usize, width: usize) -> Result<Self> {
        Self::new(Array2::ones((height, width)))
    }

    pub fn height(&self) -> usize {
        self.full.dim().0
    }

    pub fn width(&self) -> usize {
        self.full.dim().1
    }

    pub fn as_array(&self) -> &Array2<u8> {
        &self.full
    }

    /// ||M||_1 / (H*W): fraction of unmasked pixels.
    pub fn unmasked_ratio(&self) -> f64 {
        let ones: usize = self.full.iter().map(|&v| v as usize).sum();
        ones as f64 / (self.height() * self.width()) as f64
    }

    /// Nearest-neighbor downsample (pixel-center alignment) to an arbitrary
    /// resolution, thresholded at 0.5 back to binary.
    pub fn downsample(&self, height: usize, width: usize) -> Result<Array2<u8>> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidShape("downsample target must be nonzero".into()));
        }
        let (src_h, src_w) = self.full.dim();
        let mut out = Array2::zeros((height, width));
        for r in 0..height {
            let sr = (((2 * r + 1) * src_h) / (2 * height)).min(src_h - 1);
            for c in 0..width {
                let sc = (((2 * c + 1) * src_w) / (2 * width)).min(src_w - 1);
                out[[r, c]] = if f64::from(self.full[[sr, sc]]) >= 0.5 { 1 } else { 0 };
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn rejects_empty_dims() {
        assert!(LatentGrid::zeros(0, 4, 4).is_err());
        assert!(LatentGrid::zeros(1, 0, 4).is_err());
        assert!(LatentGrid::zeros(1, 4, 0).is_err());
        assert!(LatentGrid::zeros(1, 4, 4).is_ok());
    }

    #[test]
    fn zip_map_checks_congruence() {
        let a = LatentGrid::zeros(1, 2, 2).unwrap();
        let b = LatentGrid::zeros(1, 2, 3).unwrap();
        assert!(a.zip_map(&b, |x, y| x + y).is_err());
    }

    #[test]
    fn serde_round_trip_preserves_values() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let g = LatentGrid::standard_normal(2, 3, 4, &mut rng).unwrap();
        let json = serde_json::to_string(&g).unwrap();
        let back: LatentGrid = serde_json::from_str(&json).unwrap();
        assert!(g.bits_equal(&back));
    }

    #[test]
    fn serde_rejects_ragged_literals() {
        let err = serde_json::from_str::<LatentGrid>("[[[1.0, 2.0], [3.0]]]");
        assert!(err.is_err());
    }

    #[test]
    fn bits_equal_distinguishes_signed_zero() {
        let a = LatentGrid::from_shape_vec(1, 1, 1, vec![0.0]).unwrap();
        let b = LatentGrid::from_shape_vec(1, 1, 1, vec![-0.0]).unwrap();
        assert!(!a.bits_equal(&b));
        assert_eq!(a.max_abs_diff(&b).unwrap(), 0.0);
    }

    #[test]
    fn mask_ratio_counts_unmasked() {
        let m = RegionMask::new(array![[1, 0], [1, 1]]).unwrap();
        assert_eq!(m.unmasked_ratio(), 0.75);
    }

    #[test]
    fn mask_rejects_nonbinary() {
        assert!(RegionMask::new(array![[1, 2]]).is_err());
    }

    #[test]
    fn downsample_identity_at_same_resolution() {
        let m = RegionMask::new(array![[1, 0, 1], [0, 1, 0], [1, 1, 0]]).unwrap();
        assert_eq!(m.downsample(3, 3).unwrap(), *m.as_array());
    }

    #[test]
    fn downsample_halves_by_center_sampling() {
        // 4x4 with the left half masked; 2x2 nearest-neighbor picks the
        // center-aligned source pixel of each block.
        let m = RegionMask::new(array![
            [0, 0, 1, 1],
            [0, 0, 1, 1],
            [0, 0, 1, 1],
            [0, 0, 1, 1]
        ])
        .unwrap();
        assert_eq!(m.downsample(2, 2).unwrap(), array![[0, 1], [0, 1]]);
    }
}
