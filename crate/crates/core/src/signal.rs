//! Signal types and measurement simulation: complex grids with an explicit
//! centering convention, coil sets, noise, and image formation.

use crate::error::{CsError, Result};
use crate::fourier::{dc_index, fft2c_raw, ifft2c_raw};
use crate::sampler::SamplingMask;
use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Which domain a grid lives in. The DC-at-center convention applies to both.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Image,
    Kspace,
}

/// A 2-D complex-valued grid. All grids in this artifact are DC-centered.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid {
    pub data: Array2<Complex64>,
    pub domain: Domain,
}

impl ComplexGrid {
    pub fn new(data: Array2<Complex64>, domain: Domain) -> Self {
        Self { data, domain }
    }

    pub fn from_real(data: &Array2<f64>, domain: Domain) -> Self {
        Self {
            data: data.mapv(|v| Complex64::new(v, 0.0)),
            domain,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.data.mapv(|v| v.norm())
    }

    /// Value at the DC index (meaningful for k-space grids).
    pub fn dc_value(&self) -> Complex64 {
        let (h, w) = self.shape();
        let (r, c) = dc_index(h, w);
        self.data[[r, c]]
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Complex white Gaussian measurement noise, with the standard deviation
/// expressed relative to the magnitude of the noise-free DC component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    pub relative_sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            relative_sigma: 0.0,
            seed: 0,
        }
    }
}

/// Per-coil k-space measurements, optionally with sensitivity maps.
#[derive(Clone, Debug)]
pub struct CoilSet {
    pub coil_kspaces: Vec<ComplexGrid>,
    pub sensitivities: Option<Vec<ComplexGrid>>,
}

impl CoilSet {
    pub fn num_coils(&self) -> usize {
        self.coil_kspaces.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.coil_kspaces[0].shape()
    }

    pub fn validate(&self) -> Result<()> {
        if self.coil_kspaces.is_empty() {
            return Err(CsError::InvalidInput("coil set must contain ≥1 coil".into()));
        }
        let shape = self.coil_kspaces[0].shape();
        for g in &self.coil_kspaces {
            if g.shape() != shape {
                return Err(CsError::ShapeMismatch("coil k-space shapes differ".into()));
            }
        }
        if let Some(sens) = &self.sensitivities {
            if sens.len() != self.coil_kspaces.len() {
                return Err(CsError::ShapeMismatch(
                    "sensitivity count differs from coil count".into(),
                ));
            }
            for s in sens {
                if s.shape() != shape {
                    return Err(CsError::ShapeMismatch("sensitivity shape differs".into()));
                }
            }
        }
        Ok(())
    }
}

/// Unitary centered forward FFT (image → k-space).
pub fn fft2c(g: &ComplexGrid) -> Result<ComplexGrid> {
    if !g.is_finite() {
        return Err(CsError::InvalidInput("non-finite input to fft2c".into()));
    }
    Ok(ComplexGrid::new(fft2c_raw(&g.data), Domain::Kspace))
}

/// Unitary centered inverse FFT (k-space → image).
pub fn ifft2c(g: &ComplexGrid) -> Result<ComplexGrid> {
    if !g.is_finite() {
        return Err(CsError::InvalidInput("non-finite input to ifft2c".into()));
    }
    Ok(ComplexGrid::new(ifft2c_raw(&g.data), Domain::Image))
}

fn add_noise(k: &mut Array2<Complex64>, sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).unwrap();
    for v in k.iter_mut() {
        let nr = normal.sample(rng);
        let ni = normal.sample(rng);
        *v += Complex64::new(nr, ni);
    }
}

/// Single-coil measurement: mask ⊙ (F x + n). Entries where the mask is zero
/// are exactly zero. Noise std is `relative_sigma · |DC(Fx)|` per component.
pub fn simulate_single_coil(
    x: &ComplexGrid,
    mask: &SamplingMask,
    noise: &NoiseModel,
) -> Result<ComplexGrid> {
    if mask.shape() != x.shape() {
        return Err(CsError::ShapeMismatch(format!(
            "mask {:?} vs image {:?}",
            mask.shape(),
            x.shape()
        )));
    }
    let k = fft2c(x)?;
    let sigma = noise.relative_sigma * k.dc_value().norm();
    let mut data = k.data;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    add_noise(&mut data, sigma, &mut rng);
    for (v, &m) in data.iter_mut().zip(mask.m.iter()) {
        if m == 0.0 {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    Ok(ComplexGrid::new(data, Domain::Kspace))
}

/// Multi-coil measurement: per coil, mask ⊙ (F (S_i ⊙ x) + n_i) with
/// independent noise per coil.
pub fn simulate_multi_coil(
    x: &ComplexGrid,
    sensitivities: &[ComplexGrid],
    mask: &SamplingMask,
    noise: &NoiseModel,
) -> Result<CoilSet> {
    if sensitivities.is_empty() {
        return Err(CsError::InvalidInput("empty coil list".into()));
    }
    for s in sensitivities {
        if s.shape() != x.shape() {
            return Err(CsError::ShapeMismatch("sensitivity shape differs from image".into()));
        }
    }
    if mask.shape() != x.shape() {
        return Err(CsError::ShapeMismatch("mask shape differs from image".into()));
    }
    let mut coils = Vec::with_capacity(sensitivities.len());
    for (i, s) in sensitivities.iter().enumerate() {
        let weighted = ComplexGrid::new(&s.data * &x.data, Domain::Image);
        let k = fft2c(&weighted)?;
        let sigma = noise.relative_sigma * k.dc_value().norm();
        let mut data = k.data;
        // independent noise stream per coil
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed.wrapping_add(i as u64 + 1));
        add_noise(&mut data, sigma, &mut rng);
        for (v, &m) in data.iter_mut().zip(mask.m.iter()) {
            if m == 0.0 {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        coils.push(ComplexGrid::new(data, Domain::Kspace));
    }
    Ok(CoilSet {
        coil_kspaces: coils,
        sensitivities: Some(sensitivities.to_vec()),
    })
}

/// Root-sum-of-squares combination of coil images into a real image.
pub fn rss_combine(coil_images: &[ComplexGrid]) -> Result<Array2<f64>> {
    if coil_images.is_empty() {
        return Err(CsError::InvalidInput("rss_combine needs ≥1 coil image".into()));
    }
    let shape = coil_images[0].shape();
    for g in coil_images {
        if g.shape() != shape {
            return Err(CsError::ShapeMismatch("coil image shapes differ".into()));
        }
    }
    let mut acc = Array2::<f64>::zeros(shape);
    for g in coil_images {
        ndarray::Zip::from(&mut acc).and(&g.data).for_each(|a, v| *a += v.norm_sqr());
    }
    Ok(acc.mapv(f64::sqrt))
}

/// Smooth synthetic sensitivity maps with per-pixel RSS = 1.
///
/// Coils are Gaussian bumps centered around the image at distinct angles;
/// larger `smoothness` widens the bumps. A single coil is the constant map.
pub fn synthesize_sensitivities(
    num_coils: usize,
    shape: (usize, usize),
    smoothness: f64,
) -> Vec<ComplexGrid> {
    assert!(num_coils >= 1, "need at least one coil");
    let (h, w) = shape;
    if num_coils == 1 {
        return vec![ComplexGrid::new(
            Array2::from_elem(shape, Complex64::new(1.0, 0.0)),
            Domain::Image,
        )];
    }
    let sigma = smoothness.max(0.05) * (h.max(w) as f64);
    let radius = 0.45 * h.min(w) as f64;
    let mut maps: Vec<Array2<Complex64>> = Vec::with_capacity(num_coils);
    for c in 0..num_coils {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / num_coils as f64;
        let cy = h as f64 / 2.0 + radius * angle.sin();
        let cx = w as f64 / 2.0 + radius * angle.cos();
        let mut m = Array2::<Complex64>::zeros(shape);
        for ((i, j), v) in m.indexed_iter_mut() {
            let dy = i as f64 - cy;
            let dx = j as f64 - cx;
            let mag = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp() + 1e-3;
            // gentle coil-specific linear phase
            let phase = 0.2 * (dy * angle.cos() - dx * angle.sin()) / h as f64;
            *v = Complex64::from_polar(mag, phase);
        }
        maps.push(m);
    }
    // per-pixel RSS normalization
    let mut norm = Array2::<f64>::zeros(shape);
    for m in &maps {
        ndarray::Zip::from(&mut norm).and(m).for_each(|n, v| *n += v.norm_sqr());
    }
    norm.mapv_inplace(f64::sqrt);
    for m in &mut maps {
        ndarray::Zip::from(m).and(&norm).for_each(|v, &n| *v /= n);
    }
    maps.into_iter()
        .map(|m| ComplexGrid::new(m, Domain::Image))
        .collect()
}
