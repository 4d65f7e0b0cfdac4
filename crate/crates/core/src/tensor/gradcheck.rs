//! Central finite-difference utilities for verifying analytic gradients.

use super::tape::Arr;

/// Central finite difference of `f` at `x`, restricted to `idxs` (flat indices).
pub fn finite_diff_at(f: &dyn Fn(&Arr) -> f64, x: &Arr, idxs: &[usize], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(idxs.len());
    for &i in idxs {
        let mut xp = x.clone();
        let mut xm = x.clone();
        {
            let sp = xp.as_slice_mut().unwrap();
            sp[i] += h;
        }
        {
            let sm = xm.as_slice_mut().unwrap();
            sm[i] -= h;
        }
        out.push((f(&xp) - f(&xm)) / (2.0 * h));
    }
    out
}

/// Full central finite difference of `f` at `x`.
pub fn finite_diff(f: &dyn Fn(&Arr) -> f64, x: &Arr, h: f64) -> Arr {
    let idxs: Vec<usize> = (0..x.len()).collect();
    let vals = finite_diff_at(f, x, &idxs, h);
    Arr::from_shape_vec(x.raw_dim(), vals).unwrap()
}

/// Max relative error between analytic and numeric gradients.
/// The denominator is floored at `floor` plus the largest numeric magnitude
/// scaled by machine-noise, so zero entries don't blow up the ratio.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let scale = numeric
        .iter()
        .chain(analytic.iter())
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    let denom_floor = floor.max(scale * 1e-7);
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| (a - n).abs() / n.abs().max(denom_floor))
        .fold(0.0, f64::max)
}

/// Assert the analytic gradient of a scalar function matches central
/// differences. Panics with the offending index on failure.
pub fn check_scalar_fn(f: &dyn Fn(&Arr) -> f64, x: &Arr, analytic: &Arr, h: f64, tol_abs_base: f64) {
    let num = finite_diff(f, x, h);
    let a: Vec<f64> = analytic.iter().copied().collect();
    let n: Vec<f64> = num.iter().copied().collect();
    let rel = max_rel_err(&a, &n, tol_abs_base);
    assert!(
        rel < 1e-4,
        "gradient mismatch: max rel err {rel:.3e}\nanalytic: {a:?}\nnumeric:  {n:?}"
    );
}

/// Relative agreement check at a caller-supplied tolerance over selected
/// indices; returns the max relative error for reporting.
pub fn check_subset(
    f: &dyn Fn(&Arr) -> f64,
    x: &Arr,
    analytic: &Arr,
    idxs: &[usize],
    h: f64,
    tol: f64,
) -> f64 {
    let num = finite_diff_at(f, x, idxs, h);
    let aflat = analytic.as_slice().expect("analytic non-contiguous");
    let a: Vec<f64> = idxs.iter().map(|&i| aflat[i]).collect();
    let rel = max_rel_err(&a, &num, 1e-9);
    assert!(
        rel < tol,
        "gradient mismatch: max rel err {rel:.3e} (tol {tol:.1e})\nanalytic: {a:?}\nnumeric:  {num:?}"
    );
    rel
}
