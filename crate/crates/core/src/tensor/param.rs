//! Named parameter store, graph feeding, and the Adam optimizer.
//!
//! Parameter values are kept f32-representable at all times (quantized after
//! init and after every optimizer step) so that the float32 checkpoint
//! payloads round-trip without loss.

use super::tape::{Arr, Gradients, Tape, Var};
use std::collections::HashMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

pub struct ParamEntry {
    pub name: String,
    pub value: Arr,
    /// Non-trainable entries (running stats, frozen masks) are fed to graphs
    /// and checkpointed but never updated by the optimizer.
    pub trainable: bool,
    m: Arr,
    v: Arr,
}

#[derive(Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, ParamId>,
}

pub(crate) fn quantize_f32(a: &mut Arr) {
    a.mapv_inplace(|v| v as f32 as f64);
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, mut value: Arr) -> ParamId {
        self.register_full(name, {
            quantize_f32(&mut value);
            value
        }, true)
    }

    pub fn register_buffer(&mut self, name: &str, mut value: Arr) -> ParamId {
        quantize_f32(&mut value);
        self.register_full(name, value, false)
    }

    fn register_full(&mut self, name: &str, value: Arr, trainable: bool) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name: {name}"
        );
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            m: Arr::zeros(value.raw_dim()),
            v: Arr::zeros(value.raw_dim()),
            value,
            trainable,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, id: ParamId) -> &Arr {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Arr {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn set(&mut self, id: ParamId, mut value: Arr) {
        quantize_f32(&mut value);
        self.entries[id.0].value = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Reset optimizer moments (used when a new stage begins).
    pub fn reset_moments(&mut self) {
        for e in &mut self.entries {
            e.m.fill(0.0);
            e.v.fill(0.0);
        }
    }
}

/// Per-forward-pass binding of parameters to tape leaves.
pub struct GraphCtx<'a> {
    pub tape: &'a Tape,
    pub store: &'a ParamStore,
    feed_map: HashMap<ParamId, Var>,
}

impl<'a> GraphCtx<'a> {
    pub fn new(tape: &'a Tape, store: &'a ParamStore) -> Self {
        Self {
            tape,
            store,
            feed_map: HashMap::new(),
        }
    }

    /// Feed a parameter into the graph (deduplicated per pass).
    pub fn feed(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.feed_map.get(&id) {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).clone());
        self.feed_map.insert(id, v);
        v
    }

    /// Collect parameter gradients after `tape.backward`. Parameters that
    /// were fed but received no gradient are omitted.
    pub fn collect_grads(&self, grads: &mut Gradients) -> HashMap<ParamId, Arr> {
        let mut out = HashMap::new();
        for (&id, &var) in &self.feed_map {
            if let Some(g) = grads.take(var) {
                out.insert(id, g);
            }
        }
        out
    }
}

/// Adam with optional global-norm gradient clipping.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, clip_norm: Option<f64>) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm,
            t: 0,
        }
    }

    /// Apply one update over the provided gradients. Only trainable entries
    /// listed in `grads` move. Values are re-quantized to f32 afterwards.
    pub fn step(&mut self, store: &mut ParamStore, grads: &HashMap<ParamId, Arr>) {
        self.t += 1;
        let scale = match self.clip_norm {
            Some(max_norm) => {
                let total: f64 = grads
                    .iter()
                    .filter(|(id, _)| store.entries[id.0].trainable)
                    .map(|(_, g)| g.iter().map(|v| v * v).sum::<f64>())
                    .sum();
                let norm = total.sqrt();
                if norm > max_norm {
                    max_norm / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        // Deterministic update order regardless of HashMap iteration.
        let mut ids: Vec<ParamId> = grads.keys().copied().collect();
        ids.sort_by_key(|id| id.0);
        for id in ids {
            let entry = &mut store.entries[id.0];
            if !entry.trainable {
                continue;
            }
            let g = &grads[&id];
            ndarray::Zip::from(&mut entry.m)
                .and(&mut entry.v)
                .and(&mut entry.value)
                .and(g)
                .for_each(|m, v, p, &graw| {
                    let gc = graw * scale;
                    *m = self.beta1 * *m + (1.0 - self.beta1) * gc;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * gc * gc;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
                    *p = *p as f32 as f64;
                });
        }
    }
}

/// Weight init in the torch convolution style: U(-1/sqrt(fan_in), +).
pub fn uniform_fan_in(shape: &[usize], fan_in: usize, rng: &mut impl rand::Rng) -> Arr {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Arr::from_shape_simple_fn(ndarray::IxDyn(shape), || {
        rng.random_range(-bound..bound)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;
    use ndarray::IxDyn;

    #[test]
    fn adam_descends_quadratic() {
        let mut store = ParamStore::new();
        let p = store.register("w", Arr::from_elem(IxDyn(&[3]), 2.0));
        let mut opt = Adam::new(0.1, None);
        for _ in 0..200 {
            let tape = Tape::new();
            let mut ctx = GraphCtx::new(&tape, &store);
            let w = ctx.feed(p);
            let loss = ops::sum_all(&tape, ops::mul(&tape, w, w));
            let mut grads = tape.backward(loss);
            let gm = ctx.collect_grads(&mut grads);
            opt.step(&mut store, &gm);
        }
        for &v in store.get(p).iter() {
            assert!(v.abs() < 1e-2, "did not converge: {v}");
        }
    }

    #[test]
    fn params_stay_f32_representable() {
        let mut store = ParamStore::new();
        let p = store.register("w", Arr::from_elem(IxDyn(&[4]), 0.1));
        for &v in store.get(p).iter() {
            assert_eq!(v, v as f32 as f64);
        }
        let mut opt = Adam::new(1e-3, Some(1.0));
        let mut grads = HashMap::new();
        grads.insert(p, Arr::from_elem(IxDyn(&[4]), 0.637));
        opt.step(&mut store, &grads);
        for &v in store.get(p).iter() {
            assert_eq!(v, v as f32 as f64);
        }
    }

    #[test]
    fn clip_bounds_global_norm() {
        let mut store = ParamStore::new();
        let p = store.register("w", Arr::zeros(IxDyn(&[2])));
        let before = store.get(p).clone();
        let mut opt = Adam::new(1.0, Some(1e-12));
        let mut grads = HashMap::new();
        grads.insert(p, Arr::from_elem(IxDyn(&[2]), 1e9));
        opt.step(&mut store, &grads);
        // with a tiny clip the effective gradient is tiny; Adam still takes a
        // bounded step (lr-scale), so just check nothing exploded
        for (&a, &b) in store.get(p).iter().zip(before.iter()) {
            assert!((a - b).abs() <= 1.0 + 1e-9);
        }
    }
}
