//! Differentiable ops on stacked complex tensors.
//!
//! Complex grids travel through the graph as paired real/imag planes: the
//! third-from-last axis has length 2 with index 0 = real, 1 = imag, e.g.
//! (N, C, 2, H, W) for per-coil k-space and (N, 2, H, W) for a single image.

use super::tape::{Arr, Tape, Var};
use crate::fourier::{fft2c_raw, ifft2c_raw};
use ndarray::{Array2, Axis, IxDyn, Zip};
use num_complex::Complex64;

fn map_planes(a: &Arr, forward: bool) -> Arr {
    let shape = a.shape().to_vec();
    let nd = shape.len();
    assert!(nd >= 3 && shape[nd - 3] == 2, "expected (..., 2, H, W) layout");
    let (h, w) = (shape[nd - 2], shape[nd - 1]);
    let lead: usize = shape[..nd - 3].iter().product();
    let mut flat = a
        .to_shape(IxDyn(&[lead, 2, h, w]))
        .expect("plane reshape")
        .to_owned()
        .into_dimensionality::<ndarray::Ix4>()
        .unwrap();
    for li in 0..lead {
        let mut grid = Array2::<Complex64>::zeros((h, w));
        for i in 0..h {
            for j in 0..w {
                grid[[i, j]] = Complex64::new(flat[[li, 0, i, j]], flat[[li, 1, i, j]]);
            }
        }
        let res = if forward { fft2c_raw(&grid) } else { ifft2c_raw(&grid) };
        for i in 0..h {
            for j in 0..w {
                flat[[li, 0, i, j]] = res[[i, j]].re;
                flat[[li, 1, i, j]] = res[[i, j]].im;
            }
        }
    }
    flat.into_dyn().into_shape_with_order(IxDyn(&shape)).unwrap()
}

/// Unitary centered forward FFT over the trailing (2, H, W) planes.
/// Backward: the adjoint of a unitary forward transform is the inverse.
pub fn fft2c(t: &Tape, a: Var) -> Var {
    let out = map_planes(&t.value(a), true);
    t.push(
        out,
        Box::new(move |g, sink| sink(a.0, map_planes(g, false))),
    )
}

/// Unitary centered inverse FFT over the trailing (2, H, W) planes.
pub fn ifft2c(t: &Tape, a: Var) -> Var {
    let out = map_planes(&t.value(a), false);
    t.push(
        out,
        Box::new(move |g, sink| sink(a.0, map_planes(g, true))),
    )
}

fn split_planes(a: &Arr) -> (Arr, Arr) {
    let nd = a.ndim();
    (
        a.index_axis(Axis(nd - 3), 0).to_owned().insert_axis(Axis(nd - 3)),
        a.index_axis(Axis(nd - 3), 1).to_owned().insert_axis(Axis(nd - 3)),
    )
}

fn join_planes(re: &Arr, im: &Arr) -> Arr {
    let nd = re.ndim();
    ndarray::concatenate(Axis(nd - 3), &[re.view(), im.view()]).unwrap()
}

/// Complex elementwise product of two stacked tensors (broadcast supported
/// through the underlying real ops is NOT provided here; shapes must match).
pub fn cmul(t: &Tape, a: Var, b: Var) -> Var {
    let (va, vb) = (t.value(a), t.value(b));
    assert_eq!(va.shape(), vb.shape(), "cmul shape mismatch");
    let (ar, ai) = split_planes(&va);
    let (br, bi) = split_planes(&vb);
    let re = &ar * &br - &ai * &bi;
    let im = &ar * &bi + &ai * &br;
    let out = join_planes(&re, &im);
    t.push(
        out,
        Box::new(move |g, sink| {
            let (gr, gi) = split_planes(g);
            let (ar, ai) = split_planes(&va);
            let (br, bi) = split_planes(&vb);
            // d/da = conj(b) ⊗ g, d/db = conj(a) ⊗ g (real-pair calculus)
            let ga = join_planes(&(&gr * &br + &gi * &bi), &(&gi * &br - &gr * &bi));
            let gb = join_planes(&(&gr * &ar + &gi * &ai), &(&gi * &ar - &gr * &ai));
            sink(a.0, ga);
            sink(b.0, gb);
        }),
    )
}

/// Complex product conj(a) * b on stacked tensors.
pub fn cconj_mul(t: &Tape, a: Var, b: Var) -> Var {
    let (va, vb) = (t.value(a), t.value(b));
    assert_eq!(va.shape(), vb.shape(), "cconj_mul shape mismatch");
    let (ar, ai) = split_planes(&va);
    let (br, bi) = split_planes(&vb);
    let re = &ar * &br + &ai * &bi;
    let im = &ar * &bi - &ai * &br;
    let out = join_planes(&re, &im);
    t.push(
        out,
        Box::new(move |g, sink| {
            let (gr, gi) = split_planes(g);
            let (ar, ai) = split_planes(&va);
            let (br, bi) = split_planes(&vb);
            // out_r = ar*br + ai*bi ; out_i = ar*bi - ai*br
            let ga = join_planes(&(&gr * &br + &gi * &bi), &(&gr * &bi - &gi * &br));
            let gb = join_planes(&(&gr * &ar - &gi * &ai), &(&gr * &ai + &gi * &ar));
            sink(a.0, ga);
            sink(b.0, gb);
        }),
    )
}

/// Root-sum-of-squares magnitude over coil and real/imag axes:
/// (N, C, 2, H, W) → (N, H, W). A tiny epsilon keeps the gradient finite at
/// exactly-zero pixels.
pub fn rss(t: &Tape, a: Var, eps: f64) -> Var {
    let va = t.value(a);
    let shape = va.shape().to_vec();
    assert_eq!(shape.len(), 5, "rss expects (N, C, 2, H, W)");
    let (n, h, w) = (shape[0], shape[3], shape[4]);
    let mut s = Arr::zeros(IxDyn(&[n, h, w]));
    for ni in 0..n {
        for ci in 0..shape[1] {
            for p in 0..2 {
                let plane = va
                    .index_axis(Axis(0), ni)
                    .index_axis(Axis(0), ci)
                    .index_axis(Axis(0), p)
                    .to_owned();
                let mut dst = s.index_axis_mut(Axis(0), ni);
                Zip::from(&mut dst).and(&plane).for_each(|o, &v| *o += v * v);
            }
        }
    }
    let y = s.mapv(|v| (v + eps).sqrt());
    let y_rc = std::rc::Rc::new(y.clone());
    t.push(
        y,
        Box::new(move |g, sink| {
            let mut gx = Arr::zeros(IxDyn(va.shape()));
            for ni in 0..n {
                for ci in 0..gx.shape()[1] {
                    for p in 0..2 {
                        let src = va
                            .index_axis(Axis(0), ni)
                            .index_axis(Axis(0), ci)
                            .index_axis(Axis(0), p)
                            .to_owned();
                        let mut dst = gx
                            .index_axis_mut(Axis(0), ni)
                            .index_axis_move(Axis(0), ci)
                            .index_axis_move(Axis(0), p);
                        let gp = g.index_axis(Axis(0), ni);
                        let yp = y_rc.index_axis(Axis(0), ni);
                        Zip::from(&mut dst)
                            .and(&src)
                            .and(&gp)
                            .and(&yp)
                            .for_each(|o, &x, &gv, &yv| *o = gv * x / yv);
                    }
                }
            }
            sink(a.0, gx);
        }),
    )
}
