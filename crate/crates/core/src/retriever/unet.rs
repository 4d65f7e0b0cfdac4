//! U-Net building block shared by the refinement cascades, the sensitivity
//! estimator, and the segmentation head. Standard encoder/decoder with
//! average down-pooling, nearest-neighbor up-pooling, skip concatenation,
//! and two conv modules per level; channel count doubles per level.

use crate::tensor::{nn, ops, param::uniform_fan_in, GraphCtx, ParamId, ParamStore, Var};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    PRelu,
}

#[derive(Clone, Copy, Debug)]
pub struct UNetConfig {
    pub in_ch: usize,
    pub out_ch: usize,
    pub base: usize,
    pub levels: usize,
    pub act: Activation,
    pub instance_norm: bool,
}

impl UNetConfig {
    /// Cascade refiner: 2-channel complex pairs, LeakyReLU(0.2), instance norm.
    pub fn refiner(base: usize, levels: usize) -> Self {
        Self {
            in_ch: 2,
            out_ch: 2,
            base,
            levels,
            act: Activation::LeakyRelu(0.2),
            instance_norm: true,
        }
    }
}

struct ConvBlock {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    a1: Option<ParamId>,
    a2: Option<ParamId>,
}

impl ConvBlock {
    fn register(
        store: &mut ParamStore,
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
        act: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan1 = in_ch * 9;
        let fan2 = out_ch * 9;
        let prelu = matches!(act, Activation::PRelu);
        Self {
            w1: store.register(&format!("{prefix}.conv1.weight"), uniform_fan_in(&[out_ch, in_ch, 3, 3], fan1, rng)),
            b1: store.register(&format!("{prefix}.conv1.bias"), uniform_fan_in(&[out_ch], fan1, rng)),
            w2: store.register(&format!("{prefix}.conv2.weight"), uniform_fan_in(&[out_ch, out_ch, 3, 3], fan2, rng)),
            b2: store.register(&format!("{prefix}.conv2.bias"), uniform_fan_in(&[out_ch], fan2, rng)),
            a1: prelu.then(|| {
                store.register(&format!("{prefix}.act1.slope"), crate::tensor::Arr::from_elem(ndarray::IxDyn(&[1]), 0.25))
            }),
            a2: prelu.then(|| {
                store.register(&format!("{prefix}.act2.slope"), crate::tensor::Arr::from_elem(ndarray::IxDyn(&[1]), 0.25))
            }),
        }
    }

    fn forward(&self, ctx: &mut GraphCtx, x: Var, cfg: &UNetConfig) -> Var {
        let act = |ctx: &mut GraphCtx, v: Var, alpha: Option<ParamId>| match cfg.act {
            Activation::LeakyRelu(s) => ops::leaky_relu(ctx.tape, v, s),
            Activation::PRelu => {
                let a = ctx.feed(alpha.expect("prelu slope"));
                ops::prelu(ctx.tape, v, a)
            }
        };
        let (w1, b1) = (ctx.feed(self.w1), ctx.feed(self.b1));
        let mut h = nn::conv2d(ctx.tape, x, w1, Some(b1), 1, 1);
        if cfg.instance_norm {
            h = nn::instance_norm2d(ctx.tape, h, 1e-5);
        }
        h = act(ctx, h, self.a1);
        let (w2, b2) = (ctx.feed(self.w2), ctx.feed(self.b2));
        let mut h = nn::conv2d(ctx.tape, h, w2, Some(b2), 1, 1);
        if cfg.instance_norm {
            h = nn::instance_norm2d(ctx.tape, h, 1e-5);
        }
        act(ctx, h, self.a2)
    }
}

pub struct UNet {
    pub cfg: UNetConfig,
    enc: Vec<ConvBlock>,
    mid: ConvBlock,
    dec: Vec<ConvBlock>,
    final_w: ParamId,
    final_b: ParamId,
}

impl UNet {
    pub fn register(store: &mut ParamStore, prefix: &str, cfg: UNetConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut enc = Vec::with_capacity(cfg.levels);
        for l in 0..cfg.levels {
            let in_ch = if l == 0 { cfg.in_ch } else { cfg.base << (l - 1) };
            let out_ch = cfg.base << l;
            enc.push(ConvBlock::register(store, &format!("{prefix}.enc{l}"), in_ch, out_ch, cfg.act, rng));
        }
        let mid_in = cfg.base << (cfg.levels - 1);
        let mid = ConvBlock::register(store, &format!("{prefix}.mid"), mid_in, mid_in * 2, cfg.act, rng);
        let mut dec = Vec::with_capacity(cfg.levels);
        for l in (0..cfg.levels).rev() {
            let skip_ch = cfg.base << l;
            let up_ch = cfg.base << (l + 1);
            dec.push(ConvBlock::register(store, &format!("{prefix}.dec{l}"), up_ch + skip_ch, skip_ch, cfg.act, rng));
        }
        let fan = cfg.base;
        let final_w = store.register(&format!("{prefix}.final.weight"), uniform_fan_in(&[cfg.out_ch, cfg.base, 1, 1], fan, rng));
        let final_b = store.register(&format!("{prefix}.final.bias"), uniform_fan_in(&[cfg.out_ch], fan, rng));
        Self {
            cfg,
            enc,
            mid,
            dec,
            final_w,
            final_b,
        }
    }

    /// Spatial dims must be divisible by 2^levels (callers pad beforehand).
    pub fn forward(&self, ctx: &mut GraphCtx, x: Var) -> Var {
        let shape = ctx.tape.shape(x);
        let div = 1 << self.cfg.levels;
        assert!(
            shape[2] % div == 0 && shape[3] % div == 0,
            "U-Net input {}x{} not divisible by {div}",
            shape[2],
            shape[3]
        );
        let mut skips = Vec::with_capacity(self.cfg.levels);
        let mut h = x;
        for block in &self.enc {
            let s = block.forward(ctx, h, &self.cfg);
            skips.push(s);
            h = nn::avg_pool2(ctx.tape, s);
        }
        h = self.mid.forward(ctx, h, &self.cfg);
        for (block, &skip) in self.dec.iter().zip(skips.iter().rev()) {
            let up = nn::upsample_nearest2(ctx.tape, h);
            let cat = ops::concat(ctx.tape, 1, up, skip);
            h = block.forward(ctx, cat, &self.cfg);
        }
        let (w, b) = (ctx.feed(self.final_w), ctx.feed(self.final_b));
        nn::conv2d(ctx.tape, h, w, Some(b), 1, 0)
    }

    /// Zero the output layer so the network is the zero map at init.
    pub fn zero_final_layer(&self, store: &mut ParamStore) {
        let wshape = store.get(self.final_w).raw_dim();
        store.set(self.final_w, crate::tensor::Arr::zeros(wshape));
        let bshape = store.get(self.final_b).raw_dim();
        store.set(self.final_b, crate::tensor::Arr::zeros(bshape));
    }
}

/// Per-instance normalization stats over all of (C, H, W), returned as graph
/// nodes so gradients flow through the de-normalization.
pub fn norm_stats(ctx: &mut GraphCtx, x: Var, eps: f64) -> (Var, Var, Var) {
    let t = ctx.tape;
    let mean = ops::mean_axes(t, x, &[1, 2, 3]);
    let centered = ops::sub(t, x, mean);
    let var = ops::mean_axes(t, ops::mul(t, centered, centered), &[1, 2, 3]);
    let std = ops::sqrt(t, ops::add_scalar(t, var, eps));
    let xn = ops::div(t, centered, std);
    (xn, mean, std)
}

/// Symmetric padding amounts to reach a multiple of `div`.
pub fn pad_amounts(h: usize, w: usize, div: usize) -> (usize, usize, usize, usize) {
    let ph = (div - h % div) % div;
    let pw = (div - w % div) % div;
    (ph / 2, ph - ph / 2, pw / 2, pw - pw / 2)
}

/// Normalize → pad → U-Net → crop → de-normalize, the wrapper used inside
/// every cascade and the sensitivity estimator.
pub fn norm_unet_forward(unet: &UNet, ctx: &mut GraphCtx, x: Var) -> Var {
    let shape = ctx.tape.shape(x);
    let (h, w) = (shape[2], shape[3]);
    let (xn, mean, std) = norm_stats(ctx, x, 1e-12);
    let (pt, pb, pl, pr) = pad_amounts(h, w, 1 << unet.cfg.levels);
    let padded = nn::pad_spatial(ctx.tape, xn, (pt, pb, pl, pr));
    let y = unet.forward(ctx, padded);
    let cropped = nn::crop_spatial(ctx.tape, y, pt, pl, h, w);
    let t = ctx.tape;
    ops::add(t, ops::mul(t, cropped, std), mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ops, Arr, ParamStore, Tape};
    use ndarray::IxDyn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(shape: &[usize], seed: u64) -> Arr {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Arr::from_shape_simple_fn(IxDyn(shape), || rng.random::<f64>() - 0.5)
    }

    #[test]
    fn unet_shapes_and_zeroed_output() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = UNetConfig::refiner(4, 2);
        let unet = UNet::register(&mut store, "u", cfg, &mut rng);
        let x = randn(&[2, 2, 12, 16], 1);
        {
            let tape = Tape::new();
            let mut ctx = GraphCtx::new(&tape, &store);
            let vx = tape.leaf(x.clone());
            let y = unet.forward(&mut ctx, vx);
            assert_eq!(tape.shape(y), vec![2, 2, 12, 16]);
        }
        unet.zero_final_layer(&mut store);
        let tape = Tape::new();
        let mut ctx = GraphCtx::new(&tape, &store);
        let vx = tape.leaf(x);
        let y = unet.forward(&mut ctx, vx);
        assert!(tape.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn norm_unet_handles_odd_sizes() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = UNetConfig::refiner(4, 2);
        let unet = UNet::register(&mut store, "u", cfg, &mut rng);
        let x = randn(&[1, 2, 11, 13], 2);
        let tape = Tape::new();
        let mut ctx = GraphCtx::new(&tape, &store);
        let vx = tape.leaf(x);
        let y = norm_unet_forward(&unet, &mut ctx, vx);
        assert_eq!(tape.shape(y), vec![1, 2, 11, 13]);
        assert!(tape.value(y).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn unet_parameter_count_matches_reference_arithmetic() {
        // base 18, 4 levels, 2→2 channels: ~2.48M parameters per refiner
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = UNetConfig::refiner(18, 4);
        let _ = UNet::register(&mut store, "u", cfg, &mut rng);
        let n = store.num_scalars();
        assert!(
            (2_400_000..2_550_000).contains(&n),
            "unexpected parameter count {n}"
        );
    }

    #[test]
    fn prelu_unet_gradients_flow_to_slopes() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = UNetConfig {
            in_ch: 1,
            out_ch: 3,
            base: 2,
            levels: 1,
            act: Activation::PRelu,
            instance_norm: false,
        };
        let unet = UNet::register(&mut store, "p", cfg, &mut rng);
        let tape = Tape::new();
        let mut ctx = GraphCtx::new(&tape, &store);
        let vx = tape.leaf(randn(&[1, 1, 4, 4], 5));
        let y = unet.forward(&mut ctx, vx);
        let loss = ops::sum_all(&tape, ops::mul(&tape, y, y));
        let mut grads = tape.backward(loss);
        let gm = ctx.collect_grads(&mut grads);
        let slope_id = store.lookup("p.enc0.act1.slope").unwrap();
        assert!(gm.contains_key(&slope_id), "no gradient reached PReLU slope");
    }
}
