//! Fixed baseline mask generators: variable-density Poisson-disc and the
//! centered low-pass pattern.

use super::{ACSRegion, SamplingMask};
use crate::error::{CsError, Result};
use crate::fourier::dc_index;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The `b` locations closest to DC in Euclidean k-space distance, ties broken
/// by row-major index order. Exactly `b` ones.
pub fn make_lowpass_mask(shape: (usize, usize), budget: usize) -> Result<SamplingMask> {
    let (h, w) = shape;
    let n = h * w;
    if budget > n {
        return Err(CsError::InvalidBudget(format!("budget {budget} > grid size {n}")));
    }
    let (dr, dc) = dc_index(h, w);
    let mut order: Vec<(i64, usize)> = (0..n)
        .map(|i| {
            let r = (i / w) as i64 - dr as i64;
            let c = (i % w) as i64 - dc as i64;
            (r * r + c * c, i)
        })
        .collect();
    order.sort();
    let mut m = Array2::zeros(shape);
    for &(_, i) in order.iter().take(budget) {
        m[[i / w, i % w]] = 1.0;
    }
    Ok(SamplingMask { m, is_binary: true })
}

/// Local dart radius: grows linearly with distance from DC so density falls
/// off away from the center.
fn radius_at(r0: f64, d: f64, d_max: f64) -> f64 {
    r0 * (1.0 + d / d_max)
}

struct Throw {
    accepted: Vec<usize>,
    count: usize,
}

fn throw_darts(
    order: &[usize],
    shape: (usize, usize),
    r0: f64,
    d_max: f64,
    stop_above: usize,
) -> Throw {
    let (_, w) = shape;
    let (dr, dc) = dc_index(shape.0, shape.1);
    let pos = |i: usize| ((i / w) as f64, (i % w) as f64);
    let dist_dc = |i: usize| {
        let (r, c) = pos(i);
        ((r - dr as f64).powi(2) + (c - dc as f64).powi(2)).sqrt()
    };
    let mut accepted: Vec<usize> = Vec::new();
    let mut acc_pos: Vec<(f64, f64, f64)> = Vec::new(); // (row, col, radius)
    for &cand in order {
        let (cr, cc) = pos(cand);
        let r_cand = radius_at(r0, dist_dc(cand), d_max);
        let ok = acc_pos.iter().all(|&(ar, ac, r_acc)| {
            let d2 = (cr - ar).powi(2) + (cc - ac).powi(2);
            let thresh = r_cand.min(r_acc);
            d2 >= thresh * thresh
        });
        if ok {
            accepted.push(cand);
            acc_pos.push((cr, cc, r_cand));
            if accepted.len() > stop_above {
                break;
            }
        }
    }
    Throw {
        count: accepted.len(),
        accepted,
    }
}

pub fn make_poisson_disc_mask(
    shape: (usize, usize),
    budget: usize,
    acs: ACSRegion,
    seed: u64,
) -> Result<SamplingMask> {
    poisson_disc_with_steps(shape, budget, acs, seed, 60)
}

/// Dart-throwing with a bisection-tuned base radius until the ones-count
/// lands within `b ± max(1, 0.02 b)`.
pub fn poisson_disc_with_steps(
    shape: (usize, usize),
    budget: usize,
    acs: ACSRegion,
    seed: u64,
    max_steps: usize,
) -> Result<SamplingMask> {
    let (h, w) = shape;
    let n = h * w;
    if budget > n {
        return Err(CsError::InvalidBudget(format!("budget {budget} > grid size {n}")));
    }
    if budget < acs.area() {
        return Err(CsError::InvalidBudget(format!(
            "budget {budget} below ACS area {}",
            acs.area()
        )));
    }
    let target = budget - acs.area();
    let tol = 1.max((0.02 * budget as f64).round() as usize);
    let acs_set: std::collections::HashSet<usize> = acs.flat_indices(shape).into_iter().collect();
    let mut order: Vec<usize> = (0..n).filter(|i| !acs_set.contains(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let (dr, dc) = dc_index(h, w);
    let d_max = ((dr.max(h - 1 - dr) as f64).powi(2) + (dc.max(w - 1 - dc) as f64).powi(2)).sqrt();
    let assemble = |accepted: &[usize]| {
        let mut m = acs.indicator(shape);
        let flat = m.as_slice_mut().unwrap();
        for &i in accepted {
            flat[i] = 1.0;
        }
        SamplingMask { m, is_binary: true }
    };

    let mut lo = 0.0f64;
    let mut hi = d_max.max(1.0) * 2.0;
    let mut best: Option<(usize, Vec<usize>)> = None;
    for _ in 0..max_steps {
        let mid = 0.5 * (lo + hi);
        let throw = throw_darts(&order, shape, mid, d_max, target + tol);
        let dist = throw.count.abs_diff(target);
        if dist <= tol {
            return Ok(assemble(&throw.accepted));
        }
        if best.as_ref().map_or(true, |(bd, _)| dist < *bd) {
            best = Some((dist, throw.accepted.clone()));
        }
        if throw.count > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    match best {
        Some((dist, accepted)) if dist <= tol => Ok(assemble(&accepted)),
        _ => Err(CsError::GenerationFailure(format!(
            "poisson-disc bisection missed budget {budget} ± {tol} after {max_steps} steps"
        ))),
    }
}
