//! Centered unitary 2-D FFT on complex grids, shared by the signal layer and
//! the differentiable graph ops.
//!
//! Convention: DC sits at index (H/2, W/2). Forward and inverse are both
//! scaled by 1/sqrt(H*W) so the transform is unitary.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn rustfft::Fft<f64>>>> =
        RefCell::new(HashMap::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn rustfft::Fft<f64>> {
    PLANS.with(|cache| {
        let mut cache = cache.borrow_mut();
        cache
            .entry((len, inverse))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

/// Circular shift moving index 0 to index `n/2` (per axis).
pub fn fftshift2(a: &Array2<Complex64>) -> Array2<Complex64> {
    let (h, w) = a.dim();
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            out[[(i + h / 2) % h, (j + w / 2) % w]] = a[[i, j]];
        }
    }
    out
}

/// Inverse of `fftshift2` (moves index `n/2` back to 0).
pub fn ifftshift2(a: &Array2<Complex64>) -> Array2<Complex64> {
    let (h, w) = a.dim();
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            out[[i, j]] = a[[(i + h / 2) % h, (j + w / 2) % w]];
        }
    }
    out
}

fn fft2_inplace(a: &mut Array2<Complex64>, inverse: bool) {
    let (h, w) = a.dim();
    let row_plan = plan(w, inverse);
    for mut row in a.rows_mut() {
        let s = row.as_slice_mut().expect("row not contiguous");
        row_plan.process(s);
    }
    let col_plan = plan(h, inverse);
    let mut buf = vec![Complex64::default(); h];
    for j in 0..w {
        for i in 0..h {
            buf[i] = a[[i, j]];
        }
        col_plan.process(&mut buf);
        for i in 0..h {
            a[[i, j]] = buf[i];
        }
    }
}

/// Unitary centered forward FFT: image → k-space.
pub fn fft2c_raw(a: &Array2<Complex64>) -> Array2<Complex64> {
    let (h, w) = a.dim();
    let mut buf = ifftshift2(a);
    fft2_inplace(&mut buf, false);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    buf.mapv_inplace(|v| v * scale);
    fftshift2(&buf)
}

/// Unitary centered inverse FFT: k-space → image.
pub fn ifft2c_raw(a: &Array2<Complex64>) -> Array2<Complex64> {
    let (h, w) = a.dim();
    let mut buf = ifftshift2(a);
    fft2_inplace(&mut buf, true);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    buf.mapv_inplace(|v| v * scale);
    fftshift2(&buf)
}

/// DC index under the centering convention.
pub fn dc_index(h: usize, w: usize) -> (usize, usize) {
    (h / 2, w / 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_transforms_to_dc_spike() {
        let h = 6;
        let w = 10;
        let a = Array2::from_elem((h, w), Complex64::new(3.0, 0.0));
        let k = fft2c_raw(&a);
        let (dr, dc) = dc_index(h, w);
        let expected = 3.0 * ((h * w) as f64).sqrt();
        for ((i, j), v) in k.indexed_iter() {
            if (i, j) == (dr, dc) {
                assert!((v.re - expected).abs() < 1e-10 && v.im.abs() < 1e-10);
            } else {
                assert!(v.norm() < 1e-10, "leakage at ({i},{j}): {v}");
            }
        }
    }

    #[test]
    fn shift_pair_is_inverse() {
        let mut a = Array2::zeros((5, 7));
        for ((i, j), v) in a.indexed_iter_mut() {
            *v = Complex64::new(i as f64, j as f64);
        }
        let b = ifftshift2(&fftshift2(&a));
        assert_eq!(a, b);
    }
}
