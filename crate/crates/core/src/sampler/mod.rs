//! Learnable probabilistic Cartesian subsampling: budget rescaling,
//! Bernoulli draws with a straight-through backward pass, top-b test-time
//! binarization, and the ACS pre-select region.

pub mod baselines;

use crate::error::{CsError, Result};
use crate::fourier::dc_index;
use crate::io_util;
use crate::tensor::{ops, Arr, Tape, Var};
use ndarray::{Array2, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::rc::Rc;

/// Binary subsampling mask over k-space locations.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    pub m: Array2<f64>,
    pub is_binary: bool,
}

impl SamplingMask {
    pub fn full(shape: (usize, usize)) -> Self {
        Self {
            m: Array2::ones(shape),
            is_binary: true,
        }
    }

    pub fn from_grid(m: Array2<f64>) -> Self {
        let is_binary = m.iter().all(|&v| v == 0.0 || v == 1.0);
        Self { m, is_binary }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.m.dim()
    }

    pub fn ones_count(&self) -> usize {
        self.m.iter().filter(|&&v| v != 0.0).count()
    }

    /// Acceleration ratio n / ||m||_1.
    pub fn acceleration(&self) -> f64 {
        self.m.len() as f64 / self.ones_count() as f64
    }

    /// Write as a 0/255 grayscale PNG for inspection.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = self.shape();
        let mut img = image::GrayImage::new(w as u32, h as u32);
        for ((i, j), &v) in self.m.indexed_iter() {
            img.put_pixel(j as u32, i as u32, image::Luma([if v != 0.0 { 255 } else { 0 }]));
        }
        img.save(path)
            .map_err(|e| CsError::InvalidInput(format!("png write failed: {e}")))?;
        Ok(())
    }

    /// Portable-grid serialization: a TOML header next to a raw f32 payload.
    pub fn save_portable(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let (h, w) = self.shape();
        let header = MaskHeader {
            height: h,
            width: w,
            is_binary: self.is_binary,
        };
        std::fs::write(
            dir.join("mask.toml"),
            toml::to_string(&header).map_err(|e| CsError::Schema(e.to_string()))?,
        )?;
        io_util::write_f32_payload(&dir.join("mask.f32"), self.m.iter().copied())
    }

    pub fn load_portable(dir: &Path) -> Result<Self> {
        let header: MaskHeader = toml::from_str(&std::fs::read_to_string(dir.join("mask.toml"))?)
            .map_err(|e| CsError::Schema(format!("mask header: {e}")))?;
        let path = dir.join("mask.f32");
        let vals = io_util::read_f32_payload(&path)?;
        io_util::expect_len(&path, &vals, header.height * header.width)?;
        let m = Array2::from_shape_vec((header.height, header.width), vals).unwrap();
        Ok(Self::from_grid(m))
    }
}

#[derive(Serialize, Deserialize)]
struct MaskHeader {
    height: usize,
    width: usize,
    is_binary: bool,
}

/// Centered ACS pre-select block: the largest even-sided square whose area
/// stays within 1/8 of the sampling budget (clamped to the grid).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ACSRegion {
    pub h: usize,
    pub w: usize,
}

impl ACSRegion {
    pub fn for_budget(budget: usize, shape: (usize, usize)) -> Self {
        let area_cap = budget as f64 / 8.0;
        let mut side = area_cap.sqrt().floor() as usize;
        if side % 2 == 1 {
            side -= 1;
        }
        let max_side = shape.0.min(shape.1);
        let max_even = if max_side % 2 == 0 { max_side } else { max_side - 1 };
        side = side.min(max_even);
        Self { h: side, w: side }
    }

    pub fn area(&self) -> usize {
        self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn contains(&self, r: usize, c: usize, shape: (usize, usize)) -> bool {
        let (dr, dc) = dc_index(shape.0, shape.1);
        let r0 = dr - self.h / 2;
        let c0 = dc - self.w / 2;
        r >= r0 && r < r0 + self.h && c >= c0 && c < c0 + self.w
    }

    /// Row-major flat indices of the region.
    pub fn flat_indices(&self, shape: (usize, usize)) -> Vec<usize> {
        let (dr, dc) = dc_index(shape.0, shape.1);
        let r0 = dr - self.h / 2;
        let c0 = dc - self.w / 2;
        let mut out = Vec::with_capacity(self.area());
        for r in r0..r0 + self.h {
            for c in c0..c0 + self.w {
                out.push(r * shape.1 + c);
            }
        }
        out
    }

    /// 1.0 on the region, 0.0 elsewhere.
    pub fn indicator(&self, shape: (usize, usize)) -> Array2<f64> {
        let mut grid = Array2::zeros(shape);
        for idx in self.flat_indices(shape) {
            grid[[idx / shape.1, idx % shape.1]] = 1.0;
        }
        grid
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplerMode {
    Train,
    Eval,
}

/// Learnable sampler state: one logit per k-space location plus the budget
/// bookkeeping. ACS locations are hard-wired on and excluded from the
/// learnable budget.
#[derive(Clone, Debug)]
pub struct SamplerParams {
    pub q: Array2<f64>,
    pub budget: usize,
    pub acs: ACSRegion,
    pub mode: SamplerMode,
    nonacs_idx: Rc<Vec<usize>>,
}

impl SamplerParams {
    /// Initialize logits so the initial mask is near-uniform at the non-ACS
    /// budget fraction: q = logit(alpha') + U(-0.1, 0.1).
    pub fn new(shape: (usize, usize), budget: usize, seed: u64) -> Result<Self> {
        let n = shape.0 * shape.1;
        if budget > n {
            return Err(CsError::InvalidBudget(format!("budget {budget} > grid size {n}")));
        }
        if budget == 0 {
            return Err(CsError::InvalidBudget("budget must be positive".into()));
        }
        let acs = ACSRegion::for_budget(budget, shape);
        let n_free = n - acs.area();
        let b_free = budget - acs.area();
        let alpha = (b_free as f64 / n_free as f64).clamp(1e-6, 1.0 - 1e-6);
        let base = (alpha / (1.0 - alpha)).ln();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = Array2::from_shape_simple_fn(shape, || base + rng.random_range(-0.1..0.1));
        Ok(Self::from_q(q, budget, acs))
    }

    pub fn from_q(q: Array2<f64>, budget: usize, acs: ACSRegion) -> Self {
        let shape = q.dim();
        let acs_set: std::collections::HashSet<usize> =
            acs.flat_indices(shape).into_iter().collect();
        let nonacs_idx: Vec<usize> = (0..shape.0 * shape.1)
            .filter(|i| !acs_set.contains(i))
            .collect();
        Self {
            q,
            budget,
            acs,
            mode: SamplerMode::Train,
            nonacs_idx: Rc::new(nonacs_idx),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.q.dim()
    }

    pub fn nonacs_indices(&self) -> Rc<Vec<usize>> {
        Rc::clone(&self.nonacs_idx)
    }

    pub fn free_budget(&self) -> usize {
        self.budget - self.acs.area()
    }

    /// Budget tolerance for training draws: max(1, round(0.02 b)).
    pub fn tolerance(&self) -> usize {
        1.max((0.02 * self.budget as f64).round() as usize)
    }

    fn p_tilde_nonacs(&self) -> Vec<f64> {
        let flat = self.q.as_slice().unwrap();
        self.nonacs_idx
            .iter()
            .map(|&i| 1.0 / (1.0 + (-flat[i]).exp()))
            .collect()
    }

    /// Rescaled sampling probabilities over the non-ACS grid.
    pub fn probs_nonacs(&self) -> Result<Vec<f64>> {
        rescale_probs(&self.p_tilde_nonacs(), self.free_budget())
    }

    /// Draw a training mask: ACS forced on, other locations i.i.d. Bernoulli
    /// from the rescaled probabilities, redrawn (fully) until the ones-count
    /// is within tolerance or the retry cap is hit, in which case the draw
    /// closest to the budget is returned.
    pub fn draw_training_mask(&self, seed: u64) -> Result<SamplingMask> {
        debug_assert_eq!(self.mode, SamplerMode::Train);
        let p = self.probs_nonacs()?;
        let target = self.free_budget();
        let tol = self.tolerance();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = draw_until_budget(&p, target, tol, RETRY_CAP, &mut rng);
        Ok(self.assemble(&draw))
    }

    /// Deterministic top-b mask: ACS plus the highest-probability non-ACS
    /// locations, ties broken by row-major index order.
    pub fn binarize_eval_mask(&self) -> Result<SamplingMask> {
        let p = self.probs_nonacs()?;
        let take = self.free_budget();
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| {
            p[b].partial_cmp(&p[a])
                .unwrap()
                .then(self.nonacs_idx[a].cmp(&self.nonacs_idx[b]))
        });
        let mut draw = vec![0.0; p.len()];
        for &k in order.iter().take(take) {
            draw[k] = 1.0;
        }
        Ok(self.assemble(&draw))
    }

    fn assemble(&self, nonacs_values: &[f64]) -> SamplingMask {
        let shape = self.shape();
        let mut m = self.acs.indicator(shape);
        {
            let flat = m.as_slice_mut().unwrap();
            for (k, &i) in self.nonacs_idx.iter().enumerate() {
                flat[i] = nonacs_values[k];
            }
        }
        SamplingMask { m, is_binary: true }
    }
}

const RETRY_CAP: usize = 100;

fn draw_until_budget(
    p: &[f64],
    target: usize,
    tol: usize,
    cap: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut best: Option<(usize, Vec<f64>)> = None;
    for _ in 0..cap {
        let draw: Vec<f64> = p
            .iter()
            .map(|&pi| if rng.random::<f64>() < pi { 1.0 } else { 0.0 })
            .collect();
        let count = draw.iter().filter(|&&v| v != 0.0).count();
        let dist = count.abs_diff(target);
        if dist <= tol {
            return draw;
        }
        if best.as_ref().map_or(true, |(bd, _)| dist < *bd) {
            best = Some((dist, draw));
        }
    }
    best.expect("retry cap is positive").1
}

/// Budget-preserving probability rescaling (two-branch formula):
/// p = (alpha/beta) p~ when beta >= alpha, else 1 - ((1-alpha)/(1-beta))(1-p~),
/// where alpha = b/n and beta = ||p~||_1 / n. The result sums to b.
pub fn rescale_probs(p_tilde: &[f64], budget: usize) -> Result<Vec<f64>> {
    let n = p_tilde.len();
    if budget > n {
        return Err(CsError::InvalidBudget(format!("budget {budget} > {n} locations")));
    }
    if n == 0 {
        return Ok(vec![]);
    }
    let alpha = budget as f64 / n as f64;
    let beta = p_tilde.iter().sum::<f64>() / n as f64;
    let out = if beta >= alpha {
        let s = alpha / beta;
        p_tilde.iter().map(|&v| s * v).collect()
    } else {
        let s = (1.0 - alpha) / (1.0 - beta);
        p_tilde.iter().map(|&v| 1.0 - s * (1.0 - v)).collect()
    };
    Ok(out)
}

// ---------------------------------------------------------------------------
// Graph integration
// ---------------------------------------------------------------------------

/// Differentiable budget rescaling over a 1-D probability vector.
pub fn rescale_var(t: &Tape, p_tilde: Var, budget: usize) -> Var {
    let vp = t.value(p_tilde);
    let n = vp.len();
    let alpha = budget as f64 / n as f64;
    let beta = vp.sum() / n as f64;
    let out_vec = rescale_probs(vp.as_slice().unwrap(), budget).expect("budget checked upstream");
    let out = Arr::from_shape_vec(IxDyn(&[n]), out_vec).unwrap();
    t.push(
        out,
        Box::new(move |g, sink| {
            let gr = if beta >= alpha {
                let s = alpha / beta;
                let dot: f64 = g.iter().zip(vp.iter()).map(|(&gv, &pv)| gv * pv).sum();
                let corr = alpha * dot / (beta * beta * n as f64);
                g.mapv(|gv| s * gv - corr)
            } else {
                let s = (1.0 - alpha) / (1.0 - beta);
                let dot: f64 = g.iter().zip(vp.iter()).map(|(&gv, &pv)| gv * (1.0 - pv)).sum();
                let corr = s * dot / ((1.0 - beta) * n as f64);
                g.mapv(|gv| s * gv - corr)
            };
            sink(p_tilde.0, gr);
        }),
    )
}

/// Bernoulli draw with the budget retry loop; the backward pass is the
/// straight-through identity.
pub fn ste_bernoulli_var(
    t: &Tape,
    p: Var,
    target: usize,
    tol: usize,
    rng: &mut ChaCha8Rng,
) -> Var {
    let vp = t.value(p);
    let draw = draw_until_budget(vp.as_slice().unwrap(), target, tol, RETRY_CAP, rng);
    let out = Arr::from_shape_vec(IxDyn(&[draw.len()]), draw).unwrap();
    t.push(out, Box::new(move |g, sink| sink(p.0, g.clone())))
}

/// Build the full training-mask node from the logit grid: sigmoid →
/// rescale → STE Bernoulli on non-ACS locations, ACS hard-wired to one.
/// Returns an (H, W) mask variable.
pub fn training_mask_var(
    t: &Tape,
    q: Var,
    params: &SamplerParams,
    rng: &mut ChaCha8Rng,
) -> Var {
    let (h, w) = params.shape();
    let q_flat = ops::reshape(t, q, &[h * w]);
    let q_free = ops::gather_flat(t, q_flat, params.nonacs_indices());
    let p_tilde = ops::sigmoid(t, q_free);
    let p = rescale_var(t, p_tilde, params.free_budget());
    let m_free = ste_bernoulli_var(t, p, params.free_budget(), params.tolerance(), rng);
    let scattered = ops::scatter_flat(t, m_free, params.nonacs_indices(), &[h, w]);
    let acs_const = t.constant(params.acs.indicator((h, w)).into_dyn());
    ops::add(t, scattered, acs_const)
}

/// The relaxed surrogate the straight-through estimator differentiates:
/// the rescaled probability grid (ACS fixed at one). Same graph as
/// `training_mask_var` minus the Bernoulli draw.
pub fn surrogate_probs_var(t: &Tape, q: Var, params: &SamplerParams) -> Var {
    let (h, w) = params.shape();
    let q_flat = ops::reshape(t, q, &[h * w]);
    let q_free = ops::gather_flat(t, q_flat, params.nonacs_indices());
    let p_tilde = ops::sigmoid(t, q_free);
    let p = rescale_var(t, p_tilde, params.free_budget());
    let scattered = ops::scatter_flat(t, p, params.nonacs_indices(), &[h, w]);
    let acs_const = t.constant(params.acs.indicator((h, w)).into_dyn());
    ops::add(t, scattered, acs_const)
}
