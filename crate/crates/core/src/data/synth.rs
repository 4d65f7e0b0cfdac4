//! Synthetic phantom generators for the four tasks. All generators are
//! deterministic in the seed and emit f32-representable values so that the
//! on-disk round trip is bitwise.

use super::{Dataset, DatasetMeta, KspaceData, Sample, Task};
use crate::metrics::ROIBox;
use crate::signal::{ComplexGrid, Domain};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

fn quantize(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v as f32 as f64);
}

fn quantize_grid(g: &mut ComplexGrid) {
    g.data.mapv_inplace(|v| {
        num_complex::Complex64::new(v.re as f32 as f64, v.im as f32 as f64)
    });
}

/// Smooth elliptical blob with a cosine taper to zero at the boundary.
fn ellipse_blob(
    shape: (usize, usize),
    center: (f64, f64),
    axes: (f64, f64),
    angle: f64,
    amp: f64,
) -> Array2<f64> {
    let (h, w) = shape;
    let (ca, sa) = (angle.cos(), angle.sin());
    Array2::from_shape_fn((h, w), |(i, j)| {
        let dy = i as f64 - center.0;
        let dx = j as f64 - center.1;
        let u = (ca * dy + sa * dx) / axes.0;
        let v = (-sa * dy + ca * dx) / axes.1;
        let rho = (u * u + v * v).sqrt();
        if rho >= 1.0 {
            0.0
        } else {
            amp * 0.5 * (1.0 + (std::f64::consts::PI * rho).cos())
        }
    })
}

fn kspace_of(image: &Array2<f64>) -> ComplexGrid {
    let g = ComplexGrid::from_real(image, Domain::Image);
    let mut k = crate::signal::fft2c(&g).expect("finite phantom");
    quantize_grid(&mut k);
    k
}

fn patient_id(i: usize) -> String {
    format!("p{i:05}")
}

// ---------------------------------------------------------------------------
// Anisotropic phantoms (ROI-oriented reconstruction)
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AnisoOpts {
    /// Height of each horizontal stripe inside the ROI, in pixels.
    pub stripe_height: usize,
    /// Vertical gap between stripes, in pixels.
    pub stripe_gap: usize,
    pub stripe_amp: f64,
    /// ROI size as a fraction of the image side.
    pub roi_h_frac: f64,
    pub roi_w_frac: f64,
}

impl Default for AnisoOpts {
    fn default() -> Self {
        Self {
            stripe_height: 2,
            stripe_gap: 2,
            stripe_amp: 0.55,
            roi_h_frac: 0.32,
            roi_w_frac: 0.45,
        }
    }
}

/// Smooth ellipses plus thin horizontal stripe features inside a recorded ROI
/// box; spectral energy concentrates along the vertical k-axis.
pub fn make_anisotropic_phantoms(count: usize, shape: (usize, usize), seed: u64) -> Dataset {
    make_anisotropic_phantoms_with(count, shape, seed, &AnisoOpts::default())
}

pub fn make_anisotropic_phantoms_with(
    count: usize,
    shape: (usize, usize),
    seed: u64,
    opts: &AnisoOpts,
) -> Dataset {
    assert!(count >= 1);
    let (h, w) = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let center = (
            h as f64 / 2.0 + rng.random_range(-2.0..2.0),
            w as f64 / 2.0 + rng.random_range(-2.0..2.0),
        );
        let axes = (
            h as f64 * rng.random_range(0.30..0.38),
            w as f64 * rng.random_range(0.36..0.44),
        );
        let amp = rng.random_range(0.40..0.55);
        let mut img = ellipse_blob(shape, center, axes, 0.0, amp);

        // ROI inside the ellipse, jittered around the center
        let roi_h = ((h as f64 * opts.roi_h_frac) as usize).max(opts.stripe_height + opts.stripe_gap);
        let roi_w = (w as f64 * opts.roi_w_frac) as usize;
        let top = (center.0 - roi_h as f64 / 2.0 + rng.random_range(-2.0..2.0))
            .clamp(0.0, (h - roi_h) as f64) as usize;
        let left = (center.1 - roi_w as f64 / 2.0 + rng.random_range(-2.0..2.0))
            .clamp(0.0, (w - roi_w) as f64) as usize;
        let roi = ROIBox {
            top,
            left,
            height: roi_h,
            width: roi_w,
        };

        // horizontal stripes: sharp vertically, Hann-windowed horizontally
        let period = opts.stripe_height + opts.stripe_gap;
        let phase = rng.random_range(0..period);
        let amp_s = opts.stripe_amp * rng.random_range(0.85..1.15);
        for r in top..top + roi_h {
            if (r - top + phase) % period < opts.stripe_height {
                for c in left..left + roi_w {
                    let u = (c - left) as f64 / (roi_w - 1).max(1) as f64;
                    let window = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * u).cos());
                    img[[r, c]] += amp_s * window;
                }
            }
        }
        quantize(&mut img);
        let kspace = kspace_of(&img);
        samples.push(Sample {
            id: format!("s{i:05}"),
            patient_id: patient_id(i),
            kspace: KspaceData::Single(kspace),
            target: img,
            roi: Some(roi),
            seg_map: None,
            seg_classes: None,
            cls_label: None,
        });
    }
    Dataset {
        meta: DatasetMeta {
            task: Task::RoiRecon,
            height: h,
            width: w,
            classes: None,
            generator: format!("anisotropic:{}", toml::to_string(opts).unwrap().replace('\n', ";")),
            sample_ids: samples.iter().map(|s| s.id.clone()).collect(),
        },
        samples,
    }
}

// ---------------------------------------------------------------------------
// Segmentation phantoms
// ---------------------------------------------------------------------------

/// Nested ellipses with disjoint per-class intensity ranges and exact one-hot
/// labels; class 0 is background.
pub fn make_seg_phantoms(count: usize, shape: (usize, usize), classes: usize, seed: u64) -> Dataset {
    assert!(classes >= 2, "need background plus ≥1 class");
    let (h, w) = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(count);
    let fg = classes - 1;
    for i in 0..count {
        let center = (
            h as f64 / 2.0 + rng.random_range(-3.0..3.0),
            w as f64 / 2.0 + rng.random_range(-3.0..3.0),
        );
        let angle: f64 = rng.random_range(-0.5..0.5);
        let base_axes = (
            h as f64 * rng.random_range(0.32..0.38),
            w as f64 * rng.random_range(0.32..0.40),
        );
        let (ca, sa) = (angle.cos(), angle.sin());
        let mut img = Array2::<f64>::zeros((h, w));
        let mut seg = Array2::<u8>::zeros((h, w));
        // class intensity ladder: disjoint ranges so a threshold oracle works
        let level = |k: usize| 0.15 + 0.75 * k as f64 / fg as f64;
        for ((r, c), v) in img.indexed_iter_mut() {
            let dy = r as f64 - center.0;
            let dx = c as f64 - center.1;
            let u = (ca * dy + sa * dx) / base_axes.0;
            let vv = (-sa * dy + ca * dx) / base_axes.1;
            let rho = (u * u + vv * vv).sqrt();
            // innermost class has the smallest scale
            let mut assigned = 0u8;
            for k in (1..=fg).rev() {
                let scale = 1.0 - 0.72 * (k - 1) as f64 / fg as f64;
                if rho < scale {
                    assigned = k as u8;
                    break;
                }
            }
            seg[[r, c]] = assigned;
            if assigned > 0 {
                let texture = rng.random_range(-0.015..0.015);
                *v = level(assigned as usize) + texture;
            } else {
                *v = 0.02 * rng.random::<f64>();
            }
        }
        quantize(&mut img);
        let kspace = kspace_of(&img);
        samples.push(Sample {
            id: format!("s{i:05}"),
            patient_id: patient_id(i),
            kspace: KspaceData::Single(kspace),
            target: img,
            roi: None,
            seg_map: Some(seg),
            seg_classes: Some(classes),
            cls_label: None,
        });
    }
    Dataset {
        meta: DatasetMeta {
            task: Task::Segmentation,
            height: h,
            width: w,
            classes: Some(classes),
            generator: format!("seg_nested:classes={classes}"),
            sample_ids: samples.iter().map(|s| s.id.clone()).collect(),
        },
        samples,
    }
}

// ---------------------------------------------------------------------------
// Classification phantoms
// ---------------------------------------------------------------------------

/// Background ceiling for negative samples; lesions exceed it by design.
pub const CLS_BACKGROUND_CEILING: f64 = 0.75;

/// Smooth background phantoms; positive samples add a small bright blob at a
/// random interior location. Label 1 iff a blob is present.
pub fn make_cls_phantoms(count: usize, shape: (usize, usize), lesion_rate: f64, seed: u64) -> Dataset {
    assert!(lesion_rate > 0.0 && lesion_rate < 1.0, "lesion rate must be in (0,1)");
    let (h, w) = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let center = (
            h as f64 / 2.0 + rng.random_range(-2.0..2.0),
            w as f64 / 2.0 + rng.random_range(-2.0..2.0),
        );
        let axes = (
            h as f64 * rng.random_range(0.30..0.38),
            w as f64 * rng.random_range(0.30..0.38),
        );
        let amp = rng.random_range(0.45..0.60);
        let mut img = ellipse_blob(shape, center, axes, rng.random_range(-0.4..0.4), amp);
        let label: u8 = if rng.random::<f64>() < lesion_rate { 1 } else { 0 };
        if label == 1 {
            let peak = rng.random_range(0.92..0.98);
            let sigma = rng.random_range(1.0..1.8);
            let lr = center.0 + rng.random_range(-0.5..0.5) * axes.0;
            let lc = center.1 + rng.random_range(-0.5..0.5) * axes.1;
            for ((r, c), v) in img.indexed_iter_mut() {
                let d2 = (r as f64 - lr).powi(2) + (c as f64 - lc).powi(2);
                let blob = peak * (-d2 / (2.0 * sigma * sigma)).exp();
                *v = v.max(blob);
            }
        }
        quantize(&mut img);
        let kspace = kspace_of(&img);
        samples.push(Sample {
            id: format!("s{i:05}"),
            patient_id: patient_id(i),
            kspace: KspaceData::Single(kspace),
            target: img,
            roi: None,
            seg_map: None,
            seg_classes: None,
            cls_label: Some(label),
        });
    }
    Dataset {
        meta: DatasetMeta {
            task: Task::Classification,
            height: h,
            width: w,
            classes: None,
            generator: format!("cls_blob:rate={lesion_rate}"),
            sample_ids: samples.iter().map(|s| s.id.clone()).collect(),
        },
        samples,
    }
}

/// Generator dispatch used by the CLI.
pub fn generate_for_task(
    task: Task,
    count: usize,
    shape: (usize, usize),
    classes: usize,
    seed: u64,
) -> Dataset {
    match task {
        Task::FullFov | Task::RoiRecon => {
            let mut ds = make_anisotropic_phantoms(count, shape, seed);
            if task == Task::FullFov {
                ds.meta.task = Task::FullFov;
            }
            ds
        }
        Task::Segmentation => make_seg_phantoms(count, shape, classes, seed),
        Task::Classification => make_cls_phantoms(count, shape, 0.5, seed),
    }
}
