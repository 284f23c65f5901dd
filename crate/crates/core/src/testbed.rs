//! Committed Gaussian-mixture testbeds on 16x16 two-channel latents. The
//! two-component model separates its modes in every channel and gives each
//! a distinct mid-band texture coefficient, so prompts that select a mode
//! have a measurable target. The five-component model shares one DC mean
//! across components and differs only in a single high-band coefficient
//! each, isolating high-frequency content as the only inter-component
//! signal.

use crate::gmm::GmmModel;
use crate::grid::LatentGrid;
use crate::spectral::{idct2, SpectralGrid};
use ndarray::Array3;

pub const TESTBED_CHANNELS: usize = 2;
pub const TESTBED_HEIGHT: usize = 16;
pub const TESTBED_WIDTH: usize = 16;

/// Mean built from explicit orthonormal-DCT coefficients
/// (channel, x, y, amplitude); everything else is zero.
fn mean_from_coefficients(entries: &[(usize, usize, usize, f64)]) -> LatentGrid {
    let mut spec = Array3::zeros((TESTBED_CHANNELS, TESTBED_HEIGHT, TESTBED_WIDTH));
    for &(c, x, y, amp) in entries {
        spec[[c, x, y]] = amp;
    }
    idct2(&SpectralGrid::from_array(spec).expect("testbed spectra are finite and nonzero-sized"))
}

/// DC coefficient that realizes a constant spatial value under the
/// orthonormal DCT: value * sqrt(h*w).
fn constant_dc(value: f64) -> f64 {
    value * ((TESTBED_HEIGHT * TESTBED_WIDTH) as f64).sqrt()
}

/// Two well-separated modes A (selector 0) and B (selector 1), equal
/// weights, sigma 0.1. Mode A sits at (-0.8, -0.6) per channel with a
/// mid-band texture coefficient at (2, 3); mode B at (+0.8, +0.6) with the
/// transposed coefficient (3, 2). Both texture sums fall inside the default
/// mid band of a 16x16 spectrum at any mask ratio.
pub fn two_component() -> GmmModel {
    let mode_a = mean_from_coefficients(&[
        (0, 0, 0, constant_dc(-0.8)),
        (1, 0, 0, constant_dc(-0.6)),
        (0, 2, 3, 0.45),
    ]);
    let mode_b = mean_from_coefficients(&[
        (0, 0, 0, constant_dc(0.8)),
        (1, 0, 0, constant_dc(0.6)),
        (0, 3, 2, 0.45),
    ]);
    GmmModel::new(vec![mode_a, mode_b], 0.1, vec![0.5, 0.5])
        .expect("two-component testbed parameters are valid")
}

/// High-band frequency pairs of the five texture components; every sum
/// x + y is at least 0.6 * (h + w - 2) = 18, past the default mid band.
const TEXTURE_COEFFICIENTS: [(usize, usize); 5] = [(9, 9), (12, 7), (7, 12), (14, 10), (10, 14)];

/// Five equally-weighted components sharing the DC mean 1.5 in both
/// channels, each adding one high-band coefficient of amplitude 0.9 on an
/// alternating channel; sigma 0.05. Low-band content is identical across
/// components, so only the high band distinguishes them.
pub fn five_component_texture() -> GmmModel {
    let means = TEXTURE_COEFFICIENTS
        .iter()
        .enumerate()
        .map(|(k, &(x, y))| {
            mean_from_coefficients(&[
                (0, 0, 0, constant_dc(1.5)),
                (1, 0, 0, constant_dc(1.5)),
                (k % TESTBED_CHANNELS, x, y, 0.9),
            ])
        })
        .collect();
    GmmModel::new(means, 0.05, vec![0.2; 5])
        .expect("five-component testbed parameters are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::band_energy;
    use crate::spectral::{dct2, low_pass_mask, mid_pass_mask, BandThresholdParams};

    #[test]
    fn two_component_modes_are_separated_with_mid_band_texture() {
        let model = two_component();
        assert_eq!(model.component_count(), 2);
        assert_eq!(model.dims(), (2, 16, 16));
        assert_eq!(model.sigma(), 0.1);
        assert_eq!(model.weights(), &[0.5, 0.5]);

        // The texture coefficient is DC-orthogonal, so spatial means are the
        // DC values exactly.
        let mean_of = |grid: &LatentGrid, ch: usize| {
            let mut sum = 0.0;
            for r in 0..16 {
                for c in 0..16 {
                    sum += grid.as_array()[[ch, r, c]];
                }
            }
            sum / 256.0
        };
        let a = &model.means()[0];
        let b = &model.means()[1];
        assert!((mean_of(a, 0) + 0.8).abs() <= 1e-12);
        assert!((mean_of(a, 1) + 0.6).abs() <= 1e-12);
        assert!((mean_of(b, 0) - 0.8).abs() <= 1e-12);
        assert!((mean_of(b, 1) - 0.6).abs() <= 1e-12);
        assert!(a.max_abs_diff(b).unwrap() > 2.0 * 0.8 - 0.2);

        // Exactly the declared coefficients appear in the spectrum.
        let spec = dct2(a);
        assert!((spec.as_array()[[0, 0, 0]] - constant_dc(-0.8)).abs() <= 1e-9);
        assert!((spec.as_array()[[0, 2, 3]] - 0.45).abs() <= 1e-9);
        let stray: f64 = spec
            .as_array()
            .indexed_iter()
            .filter(|((c, x, y), _)| !matches!((c, x, y), (0, 0, 0) | (1, 0, 0) | (0, 2, 3)))
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max);
        assert!(stray <= 1e-9);

        // The texture lands in the default mid band at every mask ratio:
        // the lower threshold never exceeds lam_f_mp1 and the upper never
        // falls below lam_f_mp2.
        let params = BandThresholdParams::defaults_for(16, 16);
        assert!(2.0 + 3.0 > params.lam_f_mp1);
        assert!(2.0 + 3.0 <= params.lam_f_mp2);
        let mid = mid_pass_mask(16, 16, 4.5, 15.0).unwrap();
        assert!((band_energy(a, &mid).unwrap() - 0.45 * 0.45).abs() <= 1e-12);
    }

    #[test]
    fn five_component_textures_share_low_band_and_differ_high() {
        let model = five_component_texture();
        assert_eq!(model.component_count(), 5);
        assert_eq!(model.sigma(), 0.05);
        assert!(model.weights().iter().all(|&w| w == 0.2));

        let low = low_pass_mask(16, 16, 3.0).unwrap();
        let high = mid_pass_mask(16, 16, 15.0, 32.0).unwrap();
        for (i, mean) in model.means().iter().enumerate() {
            // Every non-DC coefficient sits past 0.6 * (h + w - 2).
            let spec = dct2(mean);
            for ((c, x, y), v) in spec.as_array().indexed_iter() {
                if (x, y) == (0, 0) {
                    assert!((v - constant_dc(1.5)).abs() <= 1e-9, "channel {c} DC");
                } else if v.abs() > 1e-9 {
                    assert!(x + y >= 18, "component {i} leaks texture into x+y={}", x + y);
                    assert!((v - 0.9).abs() <= 1e-9);
                }
            }
            assert!((band_energy(mean, &high).unwrap() - 0.81).abs() <= 1e-9);
            // Low band carries the shared DC only.
            let expected_low = 2.0 * constant_dc(1.5) * constant_dc(1.5);
            assert!((band_energy(mean, &low).unwrap() - expected_low).abs() <= 1e-9);
        }

        // Pairwise low-band difference vanishes; the high band separates.
        for i in 0..5 {
            for j in i + 1..5 {
                let diff =
                    model.means()[i].affine_sum(1.0, &model.means()[j], -1.0).unwrap();
                assert!(band_energy(&diff, &low).unwrap() <= 1e-18);
                assert!(band_energy(&diff, &high).unwrap() > 1.0);
            }
        }
    }

    #[test]
    fn testbeds_round_trip_through_json() {
        for model in [two_component(), five_component_texture()] {
            let json = serde_json::to_string(&model).unwrap();
            let back: GmmModel = serde_json::from_str(&json).unwrap();
            assert_eq!(back.component_count(), model.component_count());
            for (a, b) in back.means().iter().zip(model.means()) {
                assert!(a.bits_equal(b));
            }
            assert_eq!(back.sigma(), model.sigma());
            assert_eq!(back.weights(), model.weights());
        }
    }
}
