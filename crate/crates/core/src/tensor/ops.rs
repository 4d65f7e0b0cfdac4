//! Primitive differentiable ops: broadcast arithmetic, reductions,
//! activations, shape surgery, and gather/scatter.

use super::tape::{Arr, Tape, Var};
use ndarray::{Axis, IxDyn, Slice, Zip};

/// NumPy-style broadcast shape of two operand shapes.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        assert!(
            da == db || da == 1 || db == 1,
            "incompatible broadcast: {:?} vs {:?}",
            a,
            b
        );
        out[i] = da.max(db);
    }
    out
}

/// Sum `grad` down to `shape` (undo broadcasting).
pub(crate) fn reduce_to_shape(grad: &Arr, shape: &[usize]) -> Arr {
    if grad.shape() == shape {
        return grad.clone();
    }
    let mut g = grad.clone();
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for ax in 0..shape.len() {
        if shape[ax] == 1 && g.shape()[ax] != 1 {
            let summed = g.sum_axis(Axis(ax));
            g = summed.insert_axis(Axis(ax));
        }
    }
    debug_assert_eq!(g.shape(), shape);
    g
}

fn broadcast_apply(a: &Arr, b: &Arr, f: impl Fn(f64, f64) -> f64) -> Arr {
    let bs = broadcast_shape(a.shape(), b.shape());
    let av = a.broadcast(IxDyn(&bs)).expect("broadcast a");
    let bv = b.broadcast(IxDyn(&bs)).expect("broadcast b");
    let mut out = Arr::zeros(IxDyn(&bs));
    Zip::from(&mut out).and(&av).and(&bv).for_each(|o, &x, &y| *o = f(x, y));
    out
}

pub fn add(t: &Tape, a: Var, b: Var) -> Var {
    let (va, vb) = (t.value(a), t.value(b));
    let out = broadcast_apply(&va, &vb, |x, y| x + y);
    let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
    t.push(
        out,
        Box::new(move |g, sink| {
            sink(a.0, reduce_to_shape(g, &sa));
            sink(b.0, reduce_to_shape(g, &sb));
        }),
    )
}

pub fn sub(t: &Tape, a: Var, b: Var) -> Var {
    let (va, vb) = (t.value(a), t.value(b));
    let out = broadcast_apply(&va, &vb, |x, y| x - y);
    let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
    t.push(
        out,
        Box::new(move |g, sink| {
            sink(a.0, reduce_to_shape(g, &sa));
            sink(b.0, reduce_to_shape(&g.mapv(|v| -v), &sb));
        }),
    )
}

pub fn mul(t: &Tape, a: Var, b: Var) -> Var {
    let (va, vb) = (t.value(a), t.value(b));
    let out = broadcast_apply(&va, &vb, |x, y| x * y);
    let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
    t.push(
        out,
        Box::new(move |g, sink| {
            sink(a.0, reduce_to_shape(&broadcast_apply(g, &vb, |gv, y| gv * y), &sa));
            sink(b.0, reduce_to_shape(&broadcast_apply(g, &va, |gv, x| gv * x), &sb));
        }),
    )
}

pub fn div(t: &Tape, a: Var, b: Var) -> Var {
    let (va, vb) = (t.value(a), t.value(b));
    let out = broadcast_apply(&va, &vb, |x, y| x / y);
    let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
    t.push(
        out,
        Box::new(move |g, sink| {
            sink(a.0, reduce_to_shape(&broadcast_apply(g, &vb, |gv, y| gv / y), &sa));
            let gb = {
                let num = broadcast_apply(g, &va, |gv, x| gv * x);
                broadcast_apply(&num, &vb, |n, y| -n / (y * y))
            };
            sink(b.0, reduce_to_shape(&gb, &sb));
        }),
    )
}

pub fn neg(t: &Tape, a: Var) -> Var {
    scale(t, a, -1.0)
}

pub fn scale(t: &Tape, a: Var, c: f64) -> Var {
    let out = t.value(a).mapv(|x| x * c);
    t.push(out, Box::new(move |g, sink| sink(a.0, g.mapv(|v| v * c))))
}

pub fn add_scalar(t: &Tape, a: Var, c: f64) -> Var {
    let out = t.value(a).mapv(|x| x + c);
    t.push(out, Box::new(move |g, sink| sink(a.0, g.clone())))
}

pub fn ln(t: &Tape, a: Var) -> Var {
    let va = t.value(a);
    let out = va.mapv(f64::ln);
    t.push(
        out,
        Box::new(move |g, sink| {
            let mut gr = g.clone();
            Zip::from(&mut gr).and(&*va).for_each(|gv, &x| *gv /= x);
            sink(a.0, gr);
        }),
    )
}

pub fn sqrt(t: &Tape, a: Var) -> Var {
    let out = t.value(a).mapv(f64::sqrt);
    let out_rc = std::rc::Rc::new(out.clone());
    t.push(
        out,
        Box::new(move |g, sink| {
            let mut gr = g.clone();
            Zip::from(&mut gr).and(&*out_rc).for_each(|gv, &y| *gv *= 0.5 / y);
            sink(a.0, gr);
        }),
    )
}

pub fn sigmoid(t: &Tape, a: Var) -> Var {
    let out = t.value(a).mapv(|x| {
        if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        }
    });
    let out_rc = std::rc::Rc::new(out.clone());
    t.push(
        out,
        Box::new(move |g, sink| {
            let mut gr = g.clone();
            Zip::from(&mut gr).and(&*out_rc).for_each(|gv, &y| *gv *= y * (1.0 - y));
            sink(a.0, gr);
        }),
    )
}

pub fn relu(t: &Tape, a: Var) -> Var {
    leaky_relu(t, a, 0.0)
}

pub fn leaky_relu(t: &Tape, a: Var, slope: f64) -> Var {
    let va = t.value(a);
    let out = va.mapv(|x| if x > 0.0 { x } else { slope * x });
    t.push(
        out,
        Box::new(move |g, sink| {
            let mut gr = g.clone();
            Zip::from(&mut gr).and(&*va).for_each(|gv, &x| {
                if x <= 0.0 {
                    *gv *= slope;
                }
            });
            sink(a.0, gr);
        }),
    )
}

/// Parametric rectifier with a single learnable slope (shape `[1]`).
pub fn prelu(t: &Tape, a: Var, alpha: Var) -> Var {
    let va = t.value(a);
    let al = t.value(alpha)[[0]];
    let out = va.mapv(|x| if x > 0.0 { x } else { al * x });
    t.push(
        out,
        Box::new(move |g, sink| {
            let mut gr = g.clone();
            let mut ga = 0.0;
            Zip::from(&mut gr).and(&*va).for_each(|gv, &x| {
                if x <= 0.0 {
                    ga += *gv * x;
                    *gv *= al;
                }
            });
            sink(a.0, gr);
            sink(alpha.0, Arr::from_elem(IxDyn(&[1]), ga));
        }),
    )
}

pub fn sum_all(t: &Tape, a: Var) -> Var {
    let va = t.value(a);
    let out = Arr::from_elem(IxDyn(&[]), va.sum());
    let shape = va.shape().to_vec();
    t.push(
        out,
        Box::new(move |g, sink| {
            let gv = g[[]];
            sink(a.0, Arr::from_elem(IxDyn(&shape), gv));
        }),
    )
}

pub fn mean_all(t: &Tape, a: Var) -> Var {
    let n = t.value(a).len() as f64;
    let s = sum_all(t, a);
    scale(t, s, 1.0 / n)
}

/// Sum over `axes` (kept as size-1 dims).
pub fn sum_axes(t: &Tape, a: Var, axes: &[usize]) -> Var {
    let va = t.value(a);
    let mut out = (*va).clone();
    let mut sorted = axes.to_vec();
    sorted.sort_unstable();
    for &ax in sorted.iter().rev() {
        out = out.sum_axis(Axis(ax)).insert_axis(Axis(ax));
    }
    let shape = va.shape().to_vec();
    t.push(
        out,
        Box::new(move |g, sink| {
            let gb = g.broadcast(IxDyn(&shape)).expect("grad broadcast").to_owned();
            sink(a.0, gb);
        }),
    )
}

pub fn mean_axes(t: &Tape, a: Var, axes: &[usize]) -> Var {
    let shape = t.shape(a);
    let n: usize = axes.iter().map(|&ax| shape[ax]).product();
    let s = sum_axes(t, a, axes);
    scale(t, s, 1.0 / n as f64)
}

/// Softmax along `axis`.
pub fn softmax(t: &Tape, a: Var, axis: usize) -> Var {
    let va = t.value(a);
    let mut out = (*va).clone();
    for mut lane in out.lanes_mut(Axis(axis)) {
        let m = lane.iter().fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
        let mut z = 0.0;
        for x in lane.iter_mut() {
            *x = (*x - m).exp();
            z += *x;
        }
        for x in lane.iter_mut() {
            *x /= z;
        }
    }
    let y = std::rc::Rc::new(out.clone());
    t.push(
        out,
        Box::new(move |g, sink| {
            // dx = y * (g - sum(g * y, axis))
            let gy = &*y * g;
            let dot = gy.sum_axis(Axis(axis)).insert_axis(Axis(axis));
            let mut gr = g.clone();
            Zip::from(&mut gr)
                .and(&dot.broadcast(g.raw_dim()).unwrap())
                .for_each(|gv, &d| *gv -= d);
            gr *= &*y;
            sink(a.0, gr);
        }),
    )
}

/// Mean cross entropy of softmax(logits) against one-hot targets.
/// `logits`, `targets`: shape (N, C). Returns a scalar.
pub fn cross_entropy_logits(t: &Tape, logits: Var, targets: &Arr) -> Var {
    let vl = t.value(logits);
    let n = vl.shape()[0] as f64;
    let mut probs = (*vl).clone();
    let mut loss = 0.0;
    for (mut lane, tlane) in probs
        .lanes_mut(Axis(1))
        .into_iter()
        .zip(targets.lanes(Axis(1)))
    {
        let m = lane.iter().fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
        let logz = lane.iter().map(|&x| (x - m).exp()).sum::<f64>().ln() + m;
        for (x, &tv) in lane.iter_mut().zip(tlane.iter()) {
            loss -= tv * (*x - logz);
            *x = (*x - logz).exp();
        }
    }
    let targets = targets.clone();
    let out = Arr::from_elem(IxDyn(&[]), loss / n);
    t.push(
        out,
        Box::new(move |g, sink| {
            let gv = g[[]] / n;
            let gr = (&probs - &targets).mapv(|v| v * gv);
            sink(logits.0, gr);
        }),
    )
}

/// Broadcast to a larger shape (NumPy rules); backward sums back down.
pub fn broadcast_to(t: &Tape, a: Var, shape: &[usize]) -> Var {
    let va = t.value(a);
    if va.shape() == shape {
        return a;
    }
    let out = va.broadcast(IxDyn(shape)).expect("broadcast_to").to_owned();
    let src_shape = va.shape().to_vec();
    t.push(
        out,
        Box::new(move |g, sink| sink(a.0, reduce_to_shape(g, &src_shape))),
    )
}

pub fn concat(t: &Tape, axis: usize, a: Var, b: Var) -> Var {
    let (va, vb) = (t.value(a), t.value(b));
    let out = ndarray::concatenate(Axis(axis), &[va.view(), vb.view()]).expect("concat");
    let na = va.shape()[axis];
    t.push(
        out,
        Box::new(move |g, sink| {
            let ga = g.slice_axis(Axis(axis), Slice::from(0..na)).to_owned();
            let gb = g.slice_axis(Axis(axis), Slice::from(na..)).to_owned();
            sink(a.0, ga);
            sink(b.0, gb);
        }),
    )
}

/// Contiguous slice `[start, start+len)` along `axis`.
pub fn narrow(t: &Tape, a: Var, axis: usize, start: usize, len: usize) -> Var {
    let va = t.value(a);
    let out = va
        .slice_axis(Axis(axis), Slice::from(start..start + len))
        .to_owned();
    let shape = va.shape().to_vec();
    t.push(
        out,
        Box::new(move |g, sink| {
            let mut full = Arr::zeros(IxDyn(&shape));
            full.slice_axis_mut(Axis(axis), Slice::from(start..start + len))
                .assign(g);
            sink(a.0, full);
        }),
    )
}

pub fn reshape(t: &Tape, a: Var, shape: &[usize]) -> Var {
    let va = t.value(a);
    let old = va.shape().to_vec();
    let out = va
        .to_shape(IxDyn(shape))
        .expect("reshape")
        .as_standard_layout()
        .to_owned();
    t.push(
        out,
        Box::new(move |g, sink| {
            let gr = g.to_shape(IxDyn(&old)).expect("reshape grad").to_owned();
            sink(a.0, gr);
        }),
    )
}

/// Gather flat indices from a 1-D view of `a`, producing a 1-D vector.
pub fn gather_flat(t: &Tape, a: Var, idx: std::rc::Rc<Vec<usize>>) -> Var {
    let va = t.value(a);
    let flat = va.as_slice().expect("gather: non-contiguous");
    let out: Vec<f64> = idx.iter().map(|&i| flat[i]).collect();
    let shape = va.shape().to_vec();
    let idx_b = std::rc::Rc::clone(&idx);
    t.push(
        Arr::from_shape_vec(IxDyn(&[idx.len()]), out).unwrap(),
        Box::new(move |g, sink| {
            let mut full = Arr::zeros(IxDyn(&shape));
            let fs = full.as_slice_mut().unwrap();
            for (k, &i) in idx_b.iter().enumerate() {
                fs[i] += g[[k]];
            }
            sink(a.0, full);
        }),
    )
}

/// Scatter a 1-D vector into a zero grid of `shape` at flat indices.
pub fn scatter_flat(t: &Tape, a: Var, idx: std::rc::Rc<Vec<usize>>, shape: &[usize]) -> Var {
    let va = t.value(a);
    let mut out = Arr::zeros(IxDyn(shape));
    {
        let os = out.as_slice_mut().unwrap();
        for (k, &i) in idx.iter().enumerate() {
            os[i] = va[[k]];
        }
    }
    let idx_b = std::rc::Rc::clone(&idx);
    t.push(
        out,
        Box::new(move |g, sink| {
            let gs = g.as_slice().expect("scatter grad non-contiguous");
            let gr: Vec<f64> = idx_b.iter().map(|&i| gs[i]).collect();
            sink(a.0, Arr::from_shape_vec(IxDyn(&[gr.len()]), gr).unwrap());
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::check_scalar_fn;
    use ndarray::IxDyn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(shape: &[usize], seed: u64) -> Arr {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Arr::from_shape_simple_fn(IxDyn(shape), || rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn broadcast_add_mul_grads_match_fd() {
        let a0 = randn(&[2, 3, 4], 1);
        let b0 = randn(&[3, 1], 2);
        let w = randn(&[2, 3, 4], 3);
        let f = |a: &Arr, b: &Arr| {
            let t = Tape::new();
            let (va, vb) = (t.leaf(a.clone()), t.leaf(b.clone()));
            let wv = t.constant(w.clone());
            let y = mul(&t, add(&t, va, vb), wv);
            let y2 = mul(&t, y, y);
            let s_ = sum_all(&t, y2);
            (t, va, vb, s_)
        };
        let (t, va, vb, s) = f(&a0, &b0);
        let grads = t.backward(s);
        let eval_a = |a: &Arr| {
            let (t, _, _, s) = f(a, &b0);
            t.scalar(s)
        };
        let eval_b = |b: &Arr| {
            let (t, _, _, s) = f(&a0, b);
            t.scalar(s)
        };
        check_scalar_fn(&eval_a, &a0, grads.get(va).unwrap(), 1e-6, 1e-8);
        check_scalar_fn(&eval_b, &b0, grads.get(vb).unwrap(), 1e-6, 1e-8);
    }

    #[test]
    fn div_ln_sqrt_sigmoid_grads_match_fd() {
        let a0 = randn(&[5], 4).mapv(|x| x.abs() + 0.5);
        let b0 = randn(&[5], 5).mapv(|x| x.abs() + 0.7);
        let f = |a: &Arr, b: &Arr| {
            let t = Tape::new();
            let (va, vb) = (t.leaf(a.clone()), t.leaf(b.clone()));
            let d = div(&t, va, vb);
            let l = ln(&t, add_scalar(&t, d, 2.0));
            let q = sqrt(&t, add_scalar(&t, mul(&t, l, l), 0.3));
            let s = sigmoid(&t, q);
            let s_ = sum_all(&t, s);
            (t, va, vb, s_)
        };
        let (t, va, vb, s) = f(&a0, &b0);
        let grads = t.backward(s);
        check_scalar_fn(
            &|a: &Arr| {
                let (t, _, _, s) = f(a, &b0);
                t.scalar(s)
            },
            &a0,
            grads.get(va).unwrap(),
            1e-6,
            1e-8,
        );
        check_scalar_fn(
            &|b: &Arr| {
                let (t, _, _, s) = f(&a0, b);
                t.scalar(s)
            },
            &b0,
            grads.get(vb).unwrap(),
            1e-6,
            1e-8,
        );
    }

    #[test]
    fn softmax_grad_matches_fd() {
        let a0 = randn(&[3, 4], 7);
        let w = randn(&[3, 4], 8);
        let f = |a: &Arr| {
            let t = Tape::new();
            let va = t.leaf(a.clone());
            let y = softmax(&t, va, 1);
            let s = sum_all(&t, mul(&t, y, t.constant(w.clone())));
            (t, va, s)
        };
        let (t, va, s) = f(&a0);
        let grads = t.backward(s);
        check_scalar_fn(
            &|a: &Arr| {
                let (t, _, s) = f(a);
                t.scalar(s)
            },
            &a0,
            grads.get(va).unwrap(),
            1e-6,
            1e-8,
        );
    }

    #[test]
    fn cross_entropy_matches_fd_and_value() {
        let logits0 = randn(&[4, 2], 9);
        let mut targets = Arr::zeros(IxDyn(&[4, 2]));
        for i in 0..4 {
            targets[[i, i % 2]] = 1.0;
        }
        let f = |l: &Arr| {
            let t = Tape::new();
            let vl = t.leaf(l.clone());
            let s = cross_entropy_logits(&t, vl, &targets);
            (t, vl, s)
        };
        let (t, vl, s) = f(&logits0);
        // uniform logits → ln 2
        let t2 = Tape::new();
        let z = t2.leaf(Arr::zeros(IxDyn(&[1, 2])));
        let tgt = {
            let mut a = Arr::zeros(IxDyn(&[1, 2]));
            a[[0, 0]] = 1.0;
            a
        };
        let l2 = cross_entropy_logits(&t2, z, &tgt);
        assert!((t2.scalar(l2) - std::f64::consts::LN_2).abs() < 1e-12);
        let grads = t.backward(s);
        check_scalar_fn(
            &|l: &Arr| {
                let (t, _, s) = f(l);
                t.scalar(s)
            },
            &logits0,
            grads.get(vl).unwrap(),
            1e-6,
            1e-8,
        );
    }

    #[test]
    fn shape_ops_roundtrip_grads() {
        let a0 = randn(&[2, 6], 11);
        let idx = std::rc::Rc::new(vec![1usize, 3, 10]);
        let f = |a: &Arr| {
            let t = Tape::new();
            let va = t.leaf(a.clone());
            let r = reshape(&t, va, &[12]);
            let g1 = gather_flat(&t, r, std::rc::Rc::clone(&idx));
            let sc = scatter_flat(&t, g1, std::rc::Rc::clone(&idx), &[12]);
            let n = narrow(&t, sc, 0, 2, 9);
            let c = concat(&t, 0, n, n);
            let s = sum_all(&t, mul(&t, c, c));
            (t, va, s)
        };
        let (t, va, s) = f(&a0);
        let grads = t.backward(s);
        check_scalar_fn(
            &|a: &Arr| {
                let (t, _, s) = f(a);
                t.scalar(s)
            },
            &a0,
            grads.get(va).unwrap(),
            1e-6,
            1e-8,
        );
    }
}
