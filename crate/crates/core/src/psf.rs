//! Point-spread-function analysis of subsampling masks: PSF computation,
//! directional profiles through the main lobe, and FWHM measurement.

use crate::error::{CsError, Result};
use crate::sampler::SamplingMask;
use crate::signal::{ComplexGrid, Domain};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Vertical,
    Horizontal,
}

/// Magnitude samples along a grid-aligned line through the PSF main lobe.
#[derive(Clone, Debug)]
pub struct PSFProfile {
    pub direction: Direction,
    pub samples: Vec<f64>,
    pub peak_idx: usize,
}

/// FWHM measurement outcome; `Unbounded` when a half-maximum crossing is
/// missing on one side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fwhm {
    Pixels(f64),
    Unbounded,
}

impl Fwhm {
    pub fn pixels(&self) -> Option<f64> {
        match self {
            Fwhm::Pixels(v) => Some(*v),
            Fwhm::Unbounded => None,
        }
    }
}

/// Inverse unitary transform of the mask: the system PSF. Zero-filled
/// reconstruction is the circular convolution of this PSF with the image.
pub fn compute_psf(mask: &SamplingMask) -> Result<ComplexGrid> {
    if mask.ones_count() == 0 {
        return Err(CsError::InvalidInput("all-zero mask has no PSF".into()));
    }
    let grid = ComplexGrid::from_real(&mask.m, Domain::Kspace);
    crate::signal::ifft2c(&grid)
}

/// Extract the profile through the global magnitude peak.
pub fn extract_profile(psf: &ComplexGrid, direction: Direction) -> PSFProfile {
    let mag: Array2<f64> = psf.magnitude();
    let (h, w) = mag.dim();
    let mut peak = (0usize, 0usize);
    let mut best = f64::NEG_INFINITY;
    for ((i, j), &v) in mag.indexed_iter() {
        if v > best {
            best = v;
            peak = (i, j);
        }
    }
    let (samples, peak_idx) = match direction {
        Direction::Vertical => ((0..h).map(|i| mag[[i, peak.1]]).collect(), peak.0),
        Direction::Horizontal => ((0..w).map(|j| mag[[peak.0, j]]).collect(), peak.1),
    };
    PSFProfile {
        direction,
        samples,
        peak_idx,
    }
}

/// Full width at half maximum via linear interpolation between the samples
/// adjacent to each half-maximum crossing.
pub fn fwhm(profile: &PSFProfile) -> Fwhm {
    let s = &profile.samples;
    let k = profile.peak_idx;
    let half = s[k] / 2.0;

    // walk left: first sample strictly below half
    let mut left = None;
    for i in (0..k).rev() {
        if s[i] < half {
            let t = (half - s[i]) / (s[i + 1] - s[i]);
            left = Some(i as f64 + t);
            break;
        }
    }
    let mut right = None;
    for i in k + 1..s.len() {
        if s[i] < half {
            let t = (half - s[i - 1]) / (s[i] - s[i - 1]);
            right = Some((i - 1) as f64 + t);
            break;
        }
    }
    match (left, right) {
        (Some(l), Some(r)) => Fwhm::Pixels(r - l),
        _ => Fwhm::Unbounded,
    }
}

pub fn mask_fwhm(mask: &SamplingMask, direction: Direction) -> Result<Fwhm> {
    let psf = compute_psf(mask)?;
    Ok(fwhm(&extract_profile(&psf, direction)))
}

/// Relative resolution change (f1 - f2)/f1; positive means `m2` is sharper.
pub fn compare_masks(m1: &SamplingMask, m2: &SamplingMask, direction: Direction) -> Result<f64> {
    if m1.shape() != m2.shape() {
        return Err(CsError::ShapeMismatch("mask shapes differ".into()));
    }
    let f1 = mask_fwhm(m1, direction)?
        .pixels()
        .ok_or_else(|| CsError::InvalidInput("unbounded FWHM for first mask".into()))?;
    let f2 = mask_fwhm(m2, direction)?
        .pixels()
        .ok_or_else(|| CsError::InvalidInput("unbounded FWHM for second mask".into()))?;
    Ok((f1 - f2) / f1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::dc_index;
    use crate::sampler::baselines::make_lowpass_mask;
    use crate::signal;
    use ndarray::Array2;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_mask_gives_centered_impulse_and_unit_fwhm() {
        let m = SamplingMask::full((16, 16));
        let psf = compute_psf(&m).unwrap();
        let mag = psf.magnitude();
        let (dr, dc) = dc_index(16, 16);
        let total: f64 = mag.iter().sum();
        assert!(mag[[dr, dc]] / total > 1.0 - 1e-6, "impulse leakage");
        for dir in [Direction::Vertical, Direction::Horizontal] {
            let f = fwhm(&extract_profile(&psf, dir));
            assert_eq!(f, Fwhm::Pixels(1.0));
        }
    }

    #[test]
    fn all_zero_mask_rejected() {
        let m = SamplingMask::from_grid(Array2::zeros((8, 8)));
        assert!(compute_psf(&m).is_err());
    }

    #[test]
    fn triangular_profile_fwhm_is_two() {
        let p = PSFProfile {
            direction: Direction::Vertical,
            samples: vec![0.0, 0.5, 1.0, 0.5, 0.0],
            peak_idx: 2,
        };
        assert_eq!(fwhm(&p), Fwhm::Pixels(2.0));
    }

    #[test]
    fn flat_profile_is_unbounded() {
        let p = PSFProfile {
            direction: Direction::Horizontal,
            samples: vec![1.0, 1.0, 1.0001, 1.0, 1.0],
            peak_idx: 2,
        };
        assert_eq!(fwhm(&p), Fwhm::Unbounded);
    }

    #[test]
    fn real_even_mask_has_real_psf() {
        // odd-extent rectangle centered on DC: even under index negation
        let (h, w) = (32, 32);
        let (dr, dc) = dc_index(h, w);
        let mut grid = Array2::zeros((h, w));
        for i in dr - 5..=dr + 5 {
            for j in dc - 3..=dc + 3 {
                grid[[i, j]] = 1.0;
            }
        }
        let m = SamplingMask::from_grid(grid);
        let psf = compute_psf(&m).unwrap();
        let max_imag = psf.data.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
        assert!(max_imag < 1e-6, "imaginary residue {max_imag}");
    }

    #[test]
    fn zero_filled_equals_psf_circular_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (h, w) = (16, 16);
        for trial in 0..5 {
            let x = Array2::from_shape_simple_fn((h, w), || {
                Complex64::new(rng.random::<f64>(), rng.random::<f64>() - 0.5)
            });
            let xg = ComplexGrid::new(x, crate::signal::Domain::Image);
            let mgrid =
                Array2::from_shape_simple_fn((h, w), || if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 });
            let mut mask = SamplingMask::from_grid(mgrid);
            if mask.ones_count() == 0 {
                mask.m[[0, trial]] = 1.0;
            }
            // zero-filled: F^-1 (m ⊙ F x)
            let k = signal::fft2c(&xg).unwrap();
            let mut masked = k.data.clone();
            for (v, &m) in masked.iter_mut().zip(mask.m.iter()) {
                if m == 0.0 {
                    *v = Complex64::new(0.0, 0.0);
                }
            }
            let zf = signal::ifft2c(&ComplexGrid::new(masked, crate::signal::Domain::Kspace)).unwrap();
            // PSF circular convolution oracle (direct O(n^2) sum), scaled by
            // sqrt(h*w) to account for the unitary normalization of the PSF
            let psf = compute_psf(&mask).unwrap();
            let scale = ((h * w) as f64).sqrt();
            let mut conv = Array2::<Complex64>::zeros((h, w));
            for i in 0..h {
                for j in 0..w {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for a in 0..h {
                        for b in 0..w {
                            let pi = (i + h - a) % h;
                            let pj = (j + w - b) % w;
                            // PSF is DC-centered; shift so index 0 is DC
                            let pr = (pi + h / 2) % h;
                            let pc = (pj + w / 2) % w;
                            acc += xg.data[[a, b]] * psf.data[[pr, pc]];
                        }
                    }
                    conv[[i, j]] = acc / scale;
                }
            }
            let max_err = zf
                .data
                .iter()
                .zip(conv.iter())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(max_err < 1e-5, "trial {trial}: conv identity error {max_err}");
        }
    }

    #[test]
    fn lowpass_fwhm_matches_dense_dft_oracle() {
        // 1-D low-pass keeping the center half of a 64-line axis
        let (h, w) = (64, 64);
        let mut grid = Array2::zeros((h, w));
        for i in 16..48 {
            for j in 0..w {
                grid[[i, j]] = 1.0;
            }
        }
        let mask = SamplingMask::from_grid(grid);
        let got = mask_fwhm(&mask, Direction::Vertical).unwrap().pixels().unwrap();

        // dense oracle: |sum over kept lines of e^{2πi f y/h}| on a fine grid
        let kept: Vec<f64> = (16..48).map(|i| i as f64 - (h / 2) as f64).collect();
        let eval = |y: f64| -> f64 {
            let (mut re, mut im) = (0.0, 0.0);
            for &f in &kept {
                let phase = 2.0 * std::f64::consts::PI * f * y / h as f64;
                re += phase.cos();
                im += phase.sin();
            }
            (re * re + im * im).sqrt()
        };
        let peak = eval(0.0);
        let half = peak / 2.0;
        let mut right = None;
        let step = 1e-4;
        let mut y = 0.0;
        while y < h as f64 / 2.0 {
            if eval(y) < half {
                right = Some(y);
                break;
            }
            y += step;
        }
        let dense = 2.0 * right.expect("crossing exists");
        assert!(
            (got - dense).abs() < 0.1,
            "interpolated {got} vs dense {dense}"
        );
    }

    #[test]
    fn budget_monotonicity_on_nested_lowpass() {
        let mut prev = f64::INFINITY;
        for b in [64usize, 256, 1024, 2048] {
            let m = make_lowpass_mask((64, 64), b).unwrap();
            let f = mask_fwhm(&m, Direction::Vertical).unwrap().pixels().unwrap();
            assert!(f <= prev + 1e-12, "budget {b}: fwhm {f} > prev {prev}");
            prev = f;
        }
    }

    #[test]
    fn compare_masks_signs() {
        // mask concentrated on the vertical k-axis vs an isotropic low-pass of
        // equal budget: vertical resolution must improve
        let (h, w) = (32, 32);
        let budget = 128;
        let mut vert = Array2::zeros((h, w));
        // central 4-column band, 32 rows ⇒ 128 samples
        for i in 0..h {
            for j in 14..18 {
                vert[[i, j]] = 1.0;
            }
        }
        let vertical_band = SamplingMask::from_grid(vert);
        assert_eq!(vertical_band.ones_count(), budget);
        let iso = make_lowpass_mask((h, w), budget).unwrap();
        let change = compare_masks(&iso, &vertical_band, Direction::Vertical).unwrap();
        assert!(change > 0.0, "vertical band should sharpen: {change}");
        // identical masks → 0
        assert_eq!(compare_masks(&iso, &iso, Direction::Vertical).unwrap(), 0.0);
        // swapping roles flips the sign up to the other baseline's normalizer
        let rev = compare_masks(&vertical_band, &iso, Direction::Vertical).unwrap();
        assert!(rev < 0.0);
    }
}
