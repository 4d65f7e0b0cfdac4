//! Network-layer ops: convolution (im2col), pooling, upsampling, linear,
//! instance/batch normalization, and spatial pad/crop.

use super::tape::{Arr, Tape, Var};
use ndarray::{Array2, Array4, Axis, Ix2, Ix4, IxDyn, Zip};
use std::rc::Rc;

fn as4(a: &Arr) -> ndarray::ArrayView4<'_, f64> {
    a.view().into_dimensionality::<Ix4>().expect("expected 4-d tensor")
}

/// Unfold (N, C, H, W) into (C*kh*kw, N*Ho*Wo) for stride/pad convolution.
fn im2col(x: &Arr, kh: usize, kw: usize, stride: usize, pad: usize) -> (Array2<f64>, usize, usize) {
    let xv = as4(x);
    let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut col = Array2::<f64>::zeros((c * kh * kw, n * ho * wo));
    for ni in 0..n {
        for ci in 0..c {
            let plane = xv.index_axis(Axis(0), ni);
            let plane = plane.index_axis(Axis(0), ci);
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = ci * kh * kw + ki * kw + kj;
                    let mut dst = col.row_mut(row);
                    for oi in 0..ho {
                        let ii = (oi * stride + ki) as isize - pad as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for oj in 0..wo {
                            let jj = (oj * stride + kj) as isize - pad as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            dst[ni * ho * wo + oi * wo + oj] = plane[[ii as usize, jj as usize]];
                        }
                    }
                }
            }
        }
    }
    (col, ho, wo)
}

/// Fold (C*kh*kw, N*Ho*Wo) columns back onto an (N, C, H, W) gradient grid.
fn col2im(
    col: &Array2<f64>,
    shape: (usize, usize, usize, usize),
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Arr {
    let (n, c, h, w) = shape;
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = Array4::<f64>::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            let mut plane = out.index_axis_mut(Axis(0), ni);
            let mut plane = plane.index_axis_mut(Axis(0), ci);
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = ci * kh * kw + ki * kw + kj;
                    let src = col.row(row);
                    for oi in 0..ho {
                        let ii = (oi * stride + ki) as isize - pad as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for oj in 0..wo {
                            let jj = (oj * stride + kj) as isize - pad as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            plane[[ii as usize, jj as usize]] += src[ni * ho * wo + oi * wo + oj];
                        }
                    }
                }
            }
        }
    }
    out.into_dyn()
}

/// 2-D convolution, NCHW. Weight (Cout, Cin, kh, kw), optional bias (Cout).
/// The im2col buffer is recomputed in backward rather than captured.
pub fn conv2d(t: &Tape, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
    let vx = t.value(x);
    let vw = t.value(w);
    let ws = vw.shape().to_vec();
    let (cout, cin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    let xs = vx.shape().to_vec();
    assert_eq!(xs[1], cin, "conv2d: channel mismatch");
    let (col, ho, wo) = im2col(&vx, kh, kw, stride, pad);
    let w2 = vw
        .to_shape((cout, cin * kh * kw))
        .unwrap()
        .as_standard_layout()
        .to_owned();
    let out_mat = w2.dot(&col); // (Cout, N*Ho*Wo)
    let n = xs[0];
    let mut out = Array4::<f64>::zeros((n, cout, ho, wo));
    for ni in 0..n {
        for co in 0..cout {
            let src = out_mat.row(co);
            let mut dst = out.index_axis_mut(Axis(0), ni);
            let mut dst = dst.index_axis_mut(Axis(0), co);
            for oi in 0..ho {
                for oj in 0..wo {
                    dst[[oi, oj]] = src[ni * ho * wo + oi * wo + oj];
                }
            }
        }
    }
    if let Some(bv) = b {
        let vb = t.value(bv);
        for co in 0..cout {
            let bias = vb[[co]];
            out.index_axis_mut(Axis(1), co).mapv_inplace(|v| v + bias);
        }
    }
    let xs4 = (xs[0], xs[1], xs[2], xs[3]);
    t.push(
        out.into_dyn(),
        Box::new(move |g, sink| {
            let gv = as4(g);
            let (n, _, ho, wo) = (gv.shape()[0], gv.shape()[1], gv.shape()[2], gv.shape()[3]);
            // (Cout, N*Ho*Wo) arrangement of the output gradient
            let mut g_mat = Array2::<f64>::zeros((cout, n * ho * wo));
            for ni in 0..n {
                for co in 0..cout {
                    let src = gv.index_axis(Axis(0), ni);
                    let src = src.index_axis(Axis(0), co);
                    let mut dst = g_mat.row_mut(co);
                    for oi in 0..ho {
                        for oj in 0..wo {
                            dst[ni * ho * wo + oi * wo + oj] = src[[oi, oj]];
                        }
                    }
                }
            }
            let (col, _, _) = im2col(&vx, kh, kw, stride, pad);
            let gw = g_mat.dot(&col.t()); // (Cout, Cin*kh*kw)
            sink(
                w.0,
                gw.into_shape_with_order((cout, cin, kh, kw)).unwrap().into_dyn(),
            );
            if let Some(bv) = b {
                let gb: Vec<f64> = (0..cout).map(|co| g_mat.row(co).sum()).collect();
                sink(bv.0, Arr::from_shape_vec(IxDyn(&[cout]), gb).unwrap());
            }
            let w2 = vw
                .to_shape((cout, cin * kh * kw))
                .unwrap()
                .as_standard_layout()
                .to_owned();
            let g_col = w2.t().dot(&g_mat); // (Cin*k*k, N*Ho*Wo)
            sink(x.0, col2im(&g_col, xs4, kh, kw, stride, pad));
        }),
    )
}

/// Fully-connected layer: x (N, Fin), w (Fout, Fin), b (Fout) → (N, Fout).
pub fn linear(t: &Tape, x: Var, w: Var, b: Var) -> Var {
    let vx = t.value(x);
    let vw = t.value(w);
    let vb = t.value(b);
    let x2 = vx.view().into_dimensionality::<Ix2>().unwrap();
    let w2 = vw.view().into_dimensionality::<Ix2>().unwrap();
    let mut out = x2.dot(&w2.t());
    for mut row in out.rows_mut() {
        Zip::from(&mut row).and(&vb.view().into_dimensionality::<ndarray::Ix1>().unwrap())
            .for_each(|o, &bv| *o += bv);
    }
    t.push(
        out.into_dyn(),
        Box::new(move |g, sink| {
            let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
            let x2 = vx.view().into_dimensionality::<Ix2>().unwrap();
            let w2 = vw.view().into_dimensionality::<Ix2>().unwrap();
            sink(w.0, g2.t().dot(&x2).into_dyn());
            sink(b.0, g2.sum_axis(Axis(0)).into_dyn());
            sink(x.0, g2.dot(&w2).into_dyn());
        }),
    )
}

/// 2x2 stride-2 average pooling. Requires even H, W.
pub fn avg_pool2(t: &Tape, x: Var) -> Var {
    let vx = t.value(x);
    let xv = as4(&vx);
    let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
    assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 requires even spatial dims");
    let mut out = Array4::<f64>::zeros((n, c, h / 2, w / 2));
    Zip::indexed(&mut out).for_each(|(ni, ci, oi, oj), o| {
        *o = 0.25
            * (xv[[ni, ci, 2 * oi, 2 * oj]]
                + xv[[ni, ci, 2 * oi + 1, 2 * oj]]
                + xv[[ni, ci, 2 * oi, 2 * oj + 1]]
                + xv[[ni, ci, 2 * oi + 1, 2 * oj + 1]]);
    });
    t.push(
        out.into_dyn(),
        Box::new(move |g, sink| {
            let gv = as4(g);
            let mut gx = Array4::<f64>::zeros((n, c, h, w));
            Zip::indexed(&mut gx).for_each(|(ni, ci, ii, jj), o| {
                *o = 0.25 * gv[[ni, ci, ii / 2, jj / 2]];
            });
            sink(x.0, gx.into_dyn());
        }),
    )
}

/// Max pooling with kernel `k`, stride `s`, symmetric zero pad `pad`.
pub fn max_pool(t: &Tape, x: Var, k: usize, s: usize, pad: usize) -> Var {
    let vx = t.value(x);
    let xv = as4(&vx);
    let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
    let ho = (h + 2 * pad - k) / s + 1;
    let wo = (w + 2 * pad - k) / s + 1;
    let mut out = Array4::<f64>::zeros((n, c, ho, wo));
    let mut arg: Vec<u32> = vec![0; n * c * ho * wo];
    {
        let mut it = 0usize;
        for ni in 0..n {
            for ci in 0..c {
                for oi in 0..ho {
                    for oj in 0..wo {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0u32;
                        for ki in 0..k {
                            let ii = (oi * s + ki) as isize - pad as isize;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            for kj in 0..k {
                                let jj = (oj * s + kj) as isize - pad as isize;
                                if jj < 0 || jj >= w as isize {
                                    continue;
                                }
                                let v = xv[[ni, ci, ii as usize, jj as usize]];
                                if v > best {
                                    best = v;
                                    best_idx = (ii as usize * w + jj as usize) as u32;
                                }
                            }
                        }
                        out[[ni, ci, oi, oj]] = best;
                        arg[it] = best_idx;
                        it += 1;
                    }
                }
            }
        }
    }
    let arg = Rc::new(arg);
    t.push(
        out.into_dyn(),
        Box::new(move |g, sink| {
            let gv = as4(g);
            let mut gx = Array4::<f64>::zeros((n, c, h, w));
            let mut it = 0usize;
            for ni in 0..n {
                for ci in 0..c {
                    for oi in 0..gv.shape()[2] {
                        for oj in 0..gv.shape()[3] {
                            let flat = arg[it] as usize;
                            gx[[ni, ci, flat / w, flat % w]] += gv[[ni, ci, oi, oj]];
                            it += 1;
                        }
                    }
                }
            }
            sink(x.0, gx.into_dyn());
        }),
    )
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample_nearest2(t: &Tape, x: Var) -> Var {
    let vx = t.value(x);
    let xv = as4(&vx);
    let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
    let mut out = Array4::<f64>::zeros((n, c, 2 * h, 2 * w));
    Zip::indexed(&mut out).for_each(|(ni, ci, ii, jj), o| {
        *o = xv[[ni, ci, ii / 2, jj / 2]];
    });
    t.push(
        out.into_dyn(),
        Box::new(move |g, sink| {
            let gv = as4(g);
            let mut gx = Array4::<f64>::zeros((n, c, h, w));
            Zip::indexed(&mut gx).for_each(|(ni, ci, ii, jj), o| {
                *o = gv[[ni, ci, 2 * ii, 2 * jj]]
                    + gv[[ni, ci, 2 * ii + 1, 2 * jj]]
                    + gv[[ni, ci, 2 * ii, 2 * jj + 1]]
                    + gv[[ni, ci, 2 * ii + 1, 2 * jj + 1]];
            });
            sink(x.0, gx.into_dyn());
        }),
    )
}

/// Mean over spatial dims: (N, C, H, W) → (N, C).
pub fn global_avg_pool(t: &Tape, x: Var) -> Var {
    let vx = t.value(x);
    let xv = as4(&vx);
    let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
    let inv = 1.0 / (h * w) as f64;
    let mut out = Array2::<f64>::zeros((n, c));
    for ni in 0..n {
        for ci in 0..c {
            out[[ni, ci]] = xv.index_axis(Axis(0), ni).index_axis(Axis(0), ci).sum() * inv;
        }
    }
    t.push(
        out.into_dyn(),
        Box::new(move |g, sink| {
            let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
            let mut gx = Array4::<f64>::zeros((n, c, h, w));
            Zip::indexed(&mut gx).for_each(|(ni, ci, _, _), o| *o = g2[[ni, ci]] * inv);
            sink(x.0, gx.into_dyn());
        }),
    )
}

/// Instance normalization without affine parameters: each (n, c) plane is
/// normalized over its spatial extent.
pub fn instance_norm2d(t: &Tape, x: Var, eps: f64) -> Var {
    let vx = t.value(x);
    let xv = as4(&vx);
    let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
    let m = (h * w) as f64;
    let mut out = Array4::<f64>::zeros((n, c, h, w));
    let mut inv_std = Array2::<f64>::zeros((n, c));
    for ni in 0..n {
        for ci in 0..c {
            let plane = xv.index_axis(Axis(0), ni);
            let plane = plane.index_axis(Axis(0), ci);
            let mu = plane.sum() / m;
            let var = plane.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / m;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[[ni, ci]] = is;
            let mut dst = out.index_axis_mut(Axis(0), ni);
            let mut dst = dst.index_axis_mut(Axis(0), ci);
            Zip::from(&mut dst).and(&plane).for_each(|o, &v| *o = (v - mu) * is);
        }
    }
    let y = Rc::new(out.clone());
    t.push(
        out.into_dyn(),
        Box::new(move |g, sink| {
            let gv = as4(g);
            let mut gx = Array4::<f64>::zeros((n, c, h, w));
            for ni in 0..n {
                for ci in 0..c {
                    let gp = gv.index_axis(Axis(0), ni);
                    let gp = gp.index_axis(Axis(0), ci);
                    let yp = y.index_axis(Axis(0), ni);
                    let yp = yp.index_axis(Axis(0), ci);
                    let mean_g = gp.sum() / m;
                    let mean_gy = gp.iter().zip(yp.iter()).map(|(&a, &b)| a * b).sum::<f64>() / m;
                    let is = inv_std[[ni, ci]];
                    let mut dst = gx.index_axis_mut(Axis(0), ni);
                    let mut dst = dst.index_axis_mut(Axis(0), ci);
                    Zip::from(&mut dst).and(&gp).and(&yp).for_each(|o, &gvv, &yv| {
                        *o = is * (gvv - mean_g - yv * mean_gy);
                    });
                }
            }
            sink(x.0, gx.into_dyn());
        }),
    )
}

/// Batch statistics returned by `batch_norm2d_train` for running-stat updates.
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Batch normalization (training mode): per-channel stats over (N, H, W),
/// with affine gamma/beta.
pub fn batch_norm2d_train(
    t: &Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    eps: f64,
) -> (Var, BatchStats) {
    let vx = t.value(x);
    let vg = t.value(gamma);
    let vb = t.value(beta);
    let xv = as4(&vx);
    let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
    let m = (n * h * w) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ci in 0..c {
        let lane = xv.index_axis(Axis(1), ci);
        let mu = lane.sum() / m;
        mean[ci] = mu;
        var[ci] = lane.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / m;
    }
    let mut xhat = Array4::<f64>::zeros((n, c, h, w));
    let mut out = Array4::<f64>::zeros((n, c, h, w));
    for ci in 0..c {
        let is = 1.0 / (var[ci] + eps).sqrt();
        let (mu, ga, be) = (mean[ci], vg[[ci]], vb[[ci]]);
        let src = xv.index_axis(Axis(1), ci);
        let mut xh = xhat.index_axis_mut(Axis(1), ci);
        let mut o = out.index_axis_mut(Axis(1), ci);
        Zip::from(&mut xh).and(&mut o).and(&src).for_each(|xh, o, &v| {
            *xh = (v - mu) * is;
            *o = ga * *xh + be;
        });
    }
    let xhat = Rc::new(xhat);
    let var_b = var.clone();
    let stats = BatchStats { mean, var };
    let y = t.push(
        out.into_dyn(),
        Box::new(move |g, sink| {
            let gv = as4(g);
            let mut gx = Array4::<f64>::zeros((n, c, h, w));
            let mut ggamma = vec![0.0; c];
            let mut gbeta = vec![0.0; c];
            for ci in 0..c {
                let is = 1.0 / (var_b[ci] + eps).sqrt();
                let gp = gv.index_axis(Axis(1), ci);
                let xh = xhat.index_axis(Axis(1), ci);
                let sum_g: f64 = gp.sum();
                let sum_gx: f64 = gp.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum();
                ggamma[ci] = sum_gx;
                gbeta[ci] = sum_g;
                let ga = vg[[ci]];
                let mut dst = gx.index_axis_mut(Axis(1), ci);
                Zip::from(&mut dst).and(&gp).and(&xh).for_each(|o, &gvv, &xhv| {
                    *o = ga * is * (gvv - sum_g / m - xhv * sum_gx / m);
                });
            }
            sink(x.0, gx.into_dyn());
            sink(gamma.0, Arr::from_shape_vec(IxDyn(&[c]), ggamma).unwrap());
            sink(beta.0, Arr::from_shape_vec(IxDyn(&[c]), gbeta).unwrap());
        }),
    );
    (y, stats)
}

/// Batch normalization (eval mode) with fixed running statistics.
pub fn batch_norm2d_eval(
    t: &Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Var {
    let vx = t.value(x);
    let vg = t.value(gamma);
    let vb = t.value(beta);
    let xv = as4(&vx);
    let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
    let mut out = Array4::<f64>::zeros((n, c, h, w));
    let mut xhat = Array4::<f64>::zeros((n, c, h, w));
    for ci in 0..c {
        let is = 1.0 / (running_var[ci] + eps).sqrt();
        let (mu, ga, be) = (running_mean[ci], vg[[ci]], vb[[ci]]);
        let src = xv.index_axis(Axis(1), ci);
        let mut xh = xhat.index_axis_mut(Axis(1), ci);
        let mut o = out.index_axis_mut(Axis(1), ci);
        Zip::from(&mut xh).and(&mut o).and(&src).for_each(|xh, o, &v| {
            *xh = (v - mu) * is;
            *o = ga * *xh + be;
        });
    }
    let inv_std: Vec<f64> = running_var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let xhat = Rc::new(xhat);
    t.push(
        out.into_dyn(),
        Box::new(move |g, sink| {
            let gv = as4(g);
            let mut gx = Array4::<f64>::zeros((n, c, h, w));
            let mut ggamma = vec![0.0; c];
            let mut gbeta = vec![0.0; c];
            for ci in 0..c {
                let gp = gv.index_axis(Axis(1), ci);
                let xh = xhat.index_axis(Axis(1), ci);
                ggamma[ci] = gp.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum();
                gbeta[ci] = gp.sum();
                let scale = vg[[ci]] * inv_std[ci];
                let mut dst = gx.index_axis_mut(Axis(1), ci);
                Zip::from(&mut dst).and(&gp).for_each(|o, &gvv| *o = gvv * scale);
            }
            sink(x.0, gx.into_dyn());
            sink(gamma.0, Arr::from_shape_vec(IxDyn(&[c]), ggamma).unwrap());
            sink(beta.0, Arr::from_shape_vec(IxDyn(&[c]), gbeta).unwrap());
        }),
    )
}

/// Zero-pad the last two axes by (top, bottom, left, right).
pub fn pad_spatial(t: &Tape, x: Var, tblr: (usize, usize, usize, usize)) -> Var {
    let (pt, pb, pl, pr) = tblr;
    if pt + pb + pl + pr == 0 {
        return x;
    }
    let vx = t.value(x);
    let nd = vx.ndim();
    let mut shape = vx.shape().to_vec();
    let (h, w) = (shape[nd - 2], shape[nd - 1]);
    shape[nd - 2] = h + pt + pb;
    shape[nd - 1] = w + pl + pr;
    let mut out = Arr::zeros(IxDyn(&shape));
    out.slice_axis_mut(Axis(nd - 2), ndarray::Slice::from(pt..pt + h))
        .slice_axis_mut(Axis(nd - 1), ndarray::Slice::from(pl..pl + w))
        .assign(&vx);
    t.push(
        out,
        Box::new(move |g, sink| {
            let gr = g
                .slice_axis(Axis(nd - 2), ndarray::Slice::from(pt..pt + h))
                .slice_axis(Axis(nd - 1), ndarray::Slice::from(pl..pl + w))
                .to_owned();
            sink(x.0, gr);
        }),
    )
}

/// Crop the last two axes back to (h, w) starting at (top, left).
pub fn crop_spatial(t: &Tape, x: Var, top: usize, left: usize, h: usize, w: usize) -> Var {
    let vx = t.value(x);
    let nd = vx.ndim();
    let full = vx.shape().to_vec();
    if top == 0 && left == 0 && full[nd - 2] == h && full[nd - 1] == w {
        return x;
    }
    let out = vx
        .slice_axis(Axis(nd - 2), ndarray::Slice::from(top..top + h))
        .slice_axis(Axis(nd - 1), ndarray::Slice::from(left..left + w))
        .to_owned();
    t.push(
        out,
        Box::new(move |g, sink| {
            let mut gr = Arr::zeros(IxDyn(&full));
            gr.slice_axis_mut(Axis(nd - 2), ndarray::Slice::from(top..top + h))
                .slice_axis_mut(Axis(nd - 1), ndarray::Slice::from(left..left + w))
                .assign(g);
            sink(x.0, gr);
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::check_scalar_fn;
    use crate::tensor::ops;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(shape: &[usize], seed: u64) -> Arr {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Arr::from_shape_simple_fn(IxDyn(shape), || rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn conv2d_matches_direct_loop() {
        let x = randn(&[2, 3, 5, 5], 1);
        let w = randn(&[4, 3, 3, 3], 2);
        let b = randn(&[4], 3);
        let t = Tape::new();
        let (vx, vw, vb) = (t.leaf(x.clone()), t.leaf(w.clone()), t.leaf(b.clone()));
        let y = conv2d(&t, vx, vw, Some(vb), 1, 1);
        let yv = t.value(y);
        // naive direct convolution oracle
        let xv = x.view().into_dimensionality::<Ix4>().unwrap();
        let wv = w.view().into_dimensionality::<Ix4>().unwrap();
        for ni in 0..2 {
            for co in 0..4 {
                for oi in 0..5usize {
                    for oj in 0..5usize {
                        let mut acc = b[[co]];
                        for ci in 0..3 {
                            for ki in 0..3usize {
                                for kj in 0..3usize {
                                    let ii = oi as isize + ki as isize - 1;
                                    let jj = oj as isize + kj as isize - 1;
                                    if ii < 0 || jj < 0 || ii >= 5 || jj >= 5 {
                                        continue;
                                    }
                                    acc += xv[[ni, ci, ii as usize, jj as usize]]
                                        * wv[[co, ci, ki, kj]];
                                }
                            }
                        }
                        assert!((yv[[ni, co, oi, oj]] - acc).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn conv2d_grads_match_fd() {
        let x0 = randn(&[1, 2, 4, 4], 4);
        let w0 = randn(&[3, 2, 3, 3], 5);
        let b0 = randn(&[3], 6);
        let tgt = randn(&[1, 3, 2, 2], 7);
        let f = |x: &Arr, w: &Arr, b: &Arr| {
            let t = Tape::new();
            let (vx, vw, vb) = (t.leaf(x.clone()), t.leaf(w.clone()), t.leaf(b.clone()));
            let y = conv2d(&t, vx, vw, Some(vb), 2, 1);
            let d = ops::sub(&t, y, t.constant(tgt.clone()));
            let s_ = ops::sum_all(&t, ops::mul(&t, d, d));
            (t, vx, vw, vb, s_)
        };
        let (t, vx, vw, vb, s) = f(&x0, &w0, &b0);
        let grads = t.backward(s);
        check_scalar_fn(&|x: &Arr| { let (t, _, _, _, s) = f(x, &w0, &b0); t.scalar(s) }, &x0, grads.get(vx).unwrap(), 1e-5, 1e-8);
        check_scalar_fn(&|w: &Arr| { let (t, _, _, _, s) = f(&x0, w, &b0); t.scalar(s) }, &w0, grads.get(vw).unwrap(), 1e-5, 1e-8);
        check_scalar_fn(&|b: &Arr| { let (t, _, _, _, s) = f(&x0, &w0, b); t.scalar(s) }, &b0, grads.get(vb).unwrap(), 1e-5, 1e-8);
    }

    #[test]
    fn pool_upsample_linear_grads_match_fd() {
        let x0 = randn(&[2, 2, 4, 4], 8);
        let w0 = randn(&[3, 4], 9);
        let b0 = randn(&[3], 10);
        let f = |x: &Arr| {
            let t = Tape::new();
            let vx = t.leaf(x.clone());
            let p = avg_pool2(&t, vx);
            let u = upsample_nearest2(&t, p);
            let mp = max_pool(&t, u, 3, 2, 1);
            let gp = global_avg_pool(&t, mp);
            let flat = ops::reshape(&t, gp, &[2, 2]);
            let two = ops::concat(&t, 1, flat, flat);
            let y = linear(&t, two, t.leaf(w0.clone()), t.leaf(b0.clone()));
            let s_ = ops::sum_all(&t, ops::mul(&t, y, y));
            (t, vx, s_)
        };
        let (t, vx, s) = f(&x0);
        let grads = t.backward(s);
        check_scalar_fn(&|x: &Arr| { let (t, _, s) = f(x); t.scalar(s) }, &x0, grads.get(vx).unwrap(), 1e-5, 1e-8);
    }

    #[test]
    fn instance_norm_grads_and_stats() {
        let x0 = randn(&[2, 3, 4, 4], 11);
        let f = |x: &Arr| {
            let t = Tape::new();
            let vx = t.leaf(x.clone());
            let y = instance_norm2d(&t, vx, 1e-5);
            let w = t.constant(randn(&[2, 3, 4, 4], 12));
            let s_ = ops::sum_all(&t, ops::mul(&t, y, w));
            (t, vx, s_)
        };
        let (t, vx, s) = f(&x0);
        // normalized planes have zero mean, unit-ish variance
        let t2 = Tape::new();
        let y = instance_norm2d(&t2, t2.leaf(x0.clone()), 1e-8);
        let yv = t2.value(y);
        let plane = yv.view().into_dimensionality::<Ix4>().unwrap();
        let p0 = plane.index_axis(Axis(0), 0);
        let p0 = p0.index_axis(Axis(0), 0);
        assert!(p0.sum().abs() < 1e-9);
        let var: f64 = p0.iter().map(|&v| v * v).sum::<f64>() / 16.0;
        assert!((var - 1.0).abs() < 1e-5);
        let grads = t.backward(s);
        check_scalar_fn(&|x: &Arr| { let (t, _, s) = f(x); t.scalar(s) }, &x0, grads.get(vx).unwrap(), 1e-5, 1e-8);
    }

    #[test]
    fn batch_norm_train_grads_match_fd() {
        let x0 = randn(&[3, 2, 3, 3], 13);
        let g0 = randn(&[2], 14).mapv(|v| v + 1.5);
        let be0 = randn(&[2], 15);
        let f = |x: &Arr, ga: &Arr, be: &Arr| {
            let t = Tape::new();
            let (vx, vg, vb) = (t.leaf(x.clone()), t.leaf(ga.clone()), t.leaf(be.clone()));
            let (y, _) = batch_norm2d_train(&t, vx, vg, vb, 1e-5);
            let w = t.constant(randn(&[3, 2, 3, 3], 16));
            let s_ = ops::sum_all(&t, ops::mul(&t, y, w));
            (t, vx, vg, vb, s_)
        };
        let (t, vx, vg, vb, s) = f(&x0, &g0, &be0);
        let grads = t.backward(s);
        check_scalar_fn(&|x: &Arr| { let (t, _, _, _, s) = f(x, &g0, &be0); t.scalar(s) }, &x0, grads.get(vx).unwrap(), 1e-5, 1e-8);
        check_scalar_fn(&|g: &Arr| { let (t, _, _, _, s) = f(&x0, g, &be0); t.scalar(s) }, &g0, grads.get(vg).unwrap(), 1e-5, 1e-8);
        check_scalar_fn(&|b: &Arr| { let (t, _, _, _, s) = f(&x0, &g0, b); t.scalar(s) }, &be0, grads.get(vb).unwrap(), 1e-5, 1e-8);
    }

    #[test]
    fn pad_crop_roundtrip() {
        let x0 = randn(&[1, 2, 3, 5], 17);
        let t = Tape::new();
        let vx = t.leaf(x0.clone());
        let p = pad_spatial(&t, vx, (1, 2, 0, 3));
        assert_eq!(t.shape(p), vec![1, 2, 6, 8]);
        let c = crop_spatial(&t, p, 1, 0, 3, 5);
        assert_eq!(&*t.value(c), &x0);
        let s = ops::sum_all(&t, ops::mul(&t, c, c));
        let grads = t.backward(s);
        let g = grads.get(vx).unwrap();
        for (gv, xv) in g.iter().zip(x0.iter()) {
            assert!((gv - 2.0 * xv).abs() < 1e-12);
        }
    }
}
