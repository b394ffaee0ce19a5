//! Parameterized layers built on the tape ops: convolutions (standard,
//! depthwise, pointwise, depthwise-separable) and batch normalization.

pub mod conv;
pub mod loss;
pub mod norm;
pub mod pool;

use alloc::format;
use rand::Rng;

use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::params::{Bindings, BufferId, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Everything a layer needs during one forward pass.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub binds: &'a Bindings,
    pub store: &'a mut ParamStore,
    pub mode: Mode,
}

impl Ctx<'_> {
    fn p(&self, id: ParamId) -> Var {
        self.binds.get(id)
    }
}

/// He-uniform fan-in initialization: `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
pub fn he_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = sqrt(6.0 / fan_in as f64);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvConfig {
    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: 1,
            groups: 1,
            bias: true,
        }
    }

    pub fn standard(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            kernel,
            ..Self::pointwise(in_channels, out_channels)
        }
    }

    pub fn depthwise(channels: usize, kernel: usize) -> Self {
        Self {
            groups: channels,
            ..Self::standard(channels, channels, kernel)
        }
    }

    pub fn param_count(&self) -> usize {
        conv::param_count(
            self.in_channels,
            self.out_channels,
            self.kernel,
            self.groups,
            self.bias,
        )
    }

    fn validate(&self) -> Result<()> {
        let ok = self.in_channels > 0
            && self.out_channels > 0
            && self.groups > 0
            && self.in_channels % self.groups == 0
            && self.out_channels % self.groups == 0
            && self.kernel % 2 == 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid convolution {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub config: ConvConfig,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        config: ConvConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let per_group = config.in_channels / config.groups;
        let weight = store.add_param(
            format!("{name}.weight"),
            he_uniform(
                &[config.out_channels, per_group, config.kernel],
                per_group * config.kernel,
                rng,
            ),
        );
        let bias = config
            .bias
            .then(|| store.add_param(format!("{name}.bias"), Tensor::zeros(&[config.out_channels])));
        Ok(Self {
            config,
            weight,
            bias,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.p(self.weight), self.bias.map(|b| ctx.p(b)));
        ctx.tape.conv1d(x, w, b, self.config.groups)
    }

    pub fn param_count(&self) -> usize {
        self.config.param_count()
    }
}

/// Depthwise convolution (one kernel per channel) followed by a pointwise channel mix.
#[derive(Debug, Clone)]
pub struct DepthwiseSeparableConv1d {
    pub depthwise: Conv1d,
    pub pointwise: Conv1d,
}

impl DepthwiseSeparableConv1d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        filters: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            depthwise: Conv1d::new(
                store,
                &format!("{name}.depthwise"),
                ConvConfig::depthwise(channels, kernel),
                rng,
            )?,
            pointwise: Conv1d::new(
                store,
                &format!("{name}.pointwise"),
                ConvConfig::pointwise(channels, filters),
                rng,
            )?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let h = self.depthwise.forward(ctx, x)?;
        self.pointwise.forward(ctx, h)
    }

    pub fn param_count(&self) -> usize {
        self.depthwise.param_count() + self.pointwise.param_count()
    }
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: store.add_param(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones(&[channels])),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    /// Train mode normalizes with batch statistics and updates the running
    /// estimates; eval mode applies the fixed running-statistics affine map.
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let (g, b) = (ctx.p(self.gamma), ctx.p(self.beta));
        match ctx.mode {
            Mode::Train => {
                let (y, stats) = ctx.tape.batch_norm_train(x, g, b, self.eps)?;
                let m = self.momentum;
                let rm = ctx.store.buffer_mut(self.running_mean).data_mut();
                for (r, s) in rm.iter_mut().zip(&stats.mean) {
                    *r = (1.0 - m) * *r + m * s;
                }
                let rv = ctx.store.buffer_mut(self.running_var).data_mut();
                for (r, s) in rv.iter_mut().zip(&stats.var) {
                    *r = (1.0 - m) * *r + m * s;
                }
                Ok(y)
            }
            Mode::Eval => {
                let rm = ctx.store.buffer(self.running_mean).data();
                let rv = ctx.store.buffer(self.running_var).data();
                ctx.tape.batch_norm_eval(x, g, b, rm, rv, self.eps)
            }
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_slice(shape, data).unwrap()
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        t(shape, &(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())
    }

    #[test]
    fn relu_examples() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.data(y), &[0.0, 0.0, 2.0]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[0.0, 1.0, 5.0]));
        let y = tape.relu(x);
        assert_eq!(tape.data(y), tape.data(x));
    }

    #[test]
    fn pointwise_identity_kernel_is_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(random(&[2, 3, 5], 1));
        let mut w = vec![0.0; 9];
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let w = tape.constant(t(&[3, 3, 1], &w));
        let y = tape.conv1d(x, w, None, 1).unwrap();
        assert_eq!(tape.data(y), tape.data(x));
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 5]));
        let w = tape.constant(Tensor::zeros(&[2, 2, 1]));
        assert!(tape.conv1d(x, w, None, 1).is_err());
        let w = tape.constant(Tensor::zeros(&[2, 1, 1]));
        assert!(tape.conv1d(x, w, None, 2).is_err());
    }

    #[test]
    fn depthwise_separable_matches_composition_and_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let dsc = DepthwiseSeparableConv1d::new(&mut store, "dsc", 16, 16, 11, &mut rng).unwrap();
        assert_eq!(dsc.param_count(), 464);
        assert_eq!(store.num_trainable(), 464);
        // non-zero biases so the composition check is not vacuous
        for id in store.param_ids().collect::<Vec<_>>() {
            if store.param_name(id).ends_with("bias") {
                let n = store.param(id).len();
                store.param_mut(id).data_mut().copy_from_slice(random(&[n], 9).data());
            }
        }

        let x = random(&[2, 16, 13], 4);
        let mut tape = Tape::new();
        let binds = store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let mut ctx = Ctx {
            tape: &mut tape,
            binds: &binds,
            store: &mut store.clone(),
            mode: Mode::Train,
        };
        let fused = dsc.forward(&mut ctx, xv).unwrap();
        let fused = ctx.tape.value(fused).clone();

        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let dw = tape.constant(store.param(dsc.depthwise.weight).clone());
        let db = tape.constant(store.param(dsc.depthwise.bias.unwrap()).clone());
        let pw = tape.constant(store.param(dsc.pointwise.weight).clone());
        let pb = tape.constant(store.param(dsc.pointwise.bias.unwrap()).clone());
        let h = tape.conv1d(xv, dw, Some(db), 16).unwrap();
        let y = tape.conv1d(h, pw, Some(pb), 1).unwrap();
        assert_eq!(fused.data(), tape.data(y));
        assert_eq!(fused.shape(), &[2, 16, 13]);
    }

    #[test]
    fn depthwise_separable_identity() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dsc = DepthwiseSeparableConv1d::new(&mut store, "d", 3, 3, 5, &mut rng).unwrap();
        let mut dw = vec![0.0; 15];
        for c in 0..3 {
            dw[c * 5 + 2] = 1.0;
        }
        store.param_mut(dsc.depthwise.weight).data_mut().copy_from_slice(&dw);
        let mut pw = vec![0.0; 9];
        for c in 0..3 {
            pw[c * 3 + c] = 1.0;
        }
        store.param_mut(dsc.pointwise.weight).data_mut().copy_from_slice(&pw);
        let x = random(&[1, 3, 7], 5);
        let mut tape = Tape::new();
        let binds = store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let mut s2 = store.clone();
        let mut ctx = Ctx {
            tape: &mut tape,
            binds: &binds,
            store: &mut s2,
            mode: Mode::Eval,
        };
        let y = dsc.forward(&mut ctx, xv).unwrap();
        assert_eq!(tape.data(y), x.data());
    }

    fn bn_stats(data: &[f64]) -> (f64, f64) {
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn batch_norm_train_normalizes() {
        // one channel holding [1,2,3,4] across batch 2 x length 2
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let g = tape.constant(Tensor::ones(&[1]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let (y, stats) = tape.batch_norm_train(x, g, b, 0.0).unwrap();
        let (m, v) = bn_stats(tape.data(y));
        assert!(m.abs() < 1e-10);
        assert!((v - 1.0).abs() < 1e-10);
        assert_eq!(stats.mean, [2.5]);
        assert!((stats.var[0] - 5.0 / 3.0).abs() < 1e-15);

        // with the default eps the variance is shrunk by exactly var / (var + eps)
        let (y, _) = tape.batch_norm_train(x, g, b, BN_EPS).unwrap();
        let (m, v) = bn_stats(tape.data(y));
        assert!(m.abs() < 1e-10);
        assert!((v - 1.25 / (1.25 + BN_EPS)).abs() < 1e-10);
    }

    #[test]
    fn batch_norm_affine_and_eval_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(random(&[3, 2, 4], 7));
        let ones = tape.constant(Tensor::ones(&[2]));
        let zeros = tape.constant(Tensor::zeros(&[2]));
        let (xhat, _) = tape.batch_norm_train(x, ones, zeros, BN_EPS).unwrap();
        let g = tape.constant(Tensor::full(&[2], 2.0));
        let b = tape.constant(Tensor::full(&[2], 3.0));
        let (y, _) = tape.batch_norm_train(x, g, b, BN_EPS).unwrap();
        for (yy, h) in tape.data(y).iter().zip(tape.data(xhat)) {
            assert!((yy - (2.0 * h + 3.0)).abs() < 1e-12);
        }

        let y = tape
            .batch_norm_eval(x, ones, zeros, &[0.0, 0.0], &[1.0, 1.0], BN_EPS)
            .unwrap();
        for (yy, xx) in tape.data(y).iter().zip(tape.data(x)) {
            assert!((yy - xx).abs() < 1e-5);
        }
    }

    #[test]
    fn batch_norm_train_rejects_single_value() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 1]));
        let g = tape.constant(Tensor::ones(&[2]));
        let b = tape.constant(Tensor::zeros(&[2]));
        assert!(tape.batch_norm_train(x, g, b, BN_EPS).is_err());
        assert!(tape.batch_norm_eval(x, g, b, &[0.0; 2], &[1.0; 2], BN_EPS).is_ok());
    }

    #[test]
    fn batch_norm_layer_updates_running_stats_only_in_train() {
        let mut store = ParamStore::new();
        let bn = BatchNorm1d::new(&mut store, "bn", 1);
        let x = t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let mut tape = Tape::new();
        let binds = store.bind(&mut tape);
        let xv = tape.constant(x);
        {
            let mut ctx = Ctx {
                tape: &mut tape,
                binds: &binds,
                store: &mut store,
                mode: Mode::Eval,
            };
            bn.forward(&mut ctx, xv).unwrap();
        }
        assert_eq!(store.buffer(bn.running_mean).data(), &[0.0]);
        let mut ctx = Ctx {
            tape: &mut tape,
            binds: &binds,
            store: &mut store,
            mode: Mode::Train,
        };
        bn.forward(&mut ctx, xv).unwrap();
        assert!((store.buffer(bn.running_mean).data()[0] - 0.25).abs() < 1e-15);
        let want_var = 0.9 + 0.1 * 5.0 / 3.0;
        assert!((store.buffer(bn.running_var).data()[0] - want_var).abs() < 1e-15);
    }

    #[test]
    fn max_pool_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 4], &[1.0, 3.0, 2.0, 5.0]));
        let y = tape.max_pool1d(x, 3).unwrap();
        assert_eq!(tape.data(y), &[3.0, 3.0, 5.0, 5.0]);

        let x = tape.constant(Tensor::full(&[1, 2, 5], -2.0));
        let y = tape.max_pool1d(x, 3).unwrap();
        assert_eq!(tape.data(y), tape.data(x));

        let x = tape.constant(t(&[1, 1, 5], &[-5.0, -4.0, -3.0, -2.0, -1.0]));
        let y = tape.max_pool1d(x, 3).unwrap();
        assert_eq!(tape.data(y), &[-4.0, -3.0, -2.0, -1.0, -1.0]);
    }

    #[test]
    fn max_pool_routes_gradient_to_first_argmax() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1, 1, 3], &[2.0, 2.0, 1.0]));
        let y = tape.max_pool1d(x, 3).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 1.0, 0.0]);
    }

    #[test]
    fn adaptive_avg_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let y = tape.adaptive_avg_pool1d(x, 2).unwrap();
        assert_eq!(tape.data(y), &[1.5, 3.5]);
        let y = tape.adaptive_avg_pool1d(x, 1).unwrap();
        assert_eq!(tape.data(y), &[2.5]);
        let x = tape.constant(t(&[1, 1, 2], &[1.0, 3.0]));
        let y = tape.adaptive_avg_pool1d(x, 4).unwrap();
        assert_eq!(tape.data(y), &[1.0, 1.0, 3.0, 3.0]);
        assert!(tape.adaptive_avg_pool1d(x, 0).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let mut tape = Tape::new();
        let z = tape.param(t(&[1, 2], &[0.0, 0.0]));
        let l = tape.cross_entropy(z, &[0]).unwrap();
        assert!((tape.data(l)[0] - core::f64::consts::LN_2).abs() < 1e-15);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(z).unwrap(), &[-0.5, 0.5]);

        let mut tape = Tape::new();
        let z = tape.constant(t(&[1, 2], &[1000.0, -1000.0]));
        let l = tape.cross_entropy(z, &[0]).unwrap();
        assert!(tape.data(l)[0].abs() < 1e-300);

        assert!(matches!(
            tape.cross_entropy(z, &[2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    // gradient checks per layer, relative error < 1e-4 at eps 1e-5

    fn weighted(tape: &mut Tape, y: Var, seed: u64) -> Var {
        let w = random(tape.shape(y), seed);
        let w = tape.constant(w);
        let p = tape.mul(y, w).unwrap();
        tape.sum(p)
    }

    #[test]
    fn grad_check_conv_variants() {
        for &(cin, cout, k, groups) in &[(3, 4, 1, 1), (3, 4, 5, 1), (4, 4, 11, 4), (4, 8, 3, 2)] {
            let w = random(&[cout, cin / groups, k], 11);
            let bias = random(&[cout], 12);
            let x = random(&[2, cin, 6], 13);
            let e = grad_check(
                |tape, xv| {
                    let wv = tape.constant(w.clone());
                    let bv = tape.constant(bias.clone());
                    let y = tape.conv1d(xv, wv, Some(bv), groups)?;
                    Ok(weighted(tape, y, 14))
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(e < 1e-4, "input grad {cin}->{cout} k{k} g{groups}: {e}");
            let e = grad_check(
                |tape, wv| {
                    let xv = tape.constant(x.clone());
                    let bv = tape.constant(bias.clone());
                    let y = tape.conv1d(xv, wv, Some(bv), groups)?;
                    Ok(weighted(tape, y, 14))
                },
                &w,
                1e-5,
            )
            .unwrap();
            assert!(e < 1e-4, "weight grad {cin}->{cout} k{k} g{groups}: {e}");
            let e = grad_check(
                |tape, bv| {
                    let xv = tape.constant(x.clone());
                    let wv = tape.constant(w.clone());
                    let y = tape.conv1d(xv, wv, Some(bv), groups)?;
                    Ok(weighted(tape, y, 14))
                },
                &bias,
                1e-5,
            )
            .unwrap();
            assert!(e < 1e-4, "bias grad: {e}");
        }
    }

    #[test]
    fn grad_check_batch_norm_both_modes() {
        let x = random(&[3, 2, 5], 21);
        let gamma = t(&[2], &[1.5, -0.7]);
        let beta = t(&[2], &[0.2, 0.1]);
        for train in [true, false] {
            let run = |tape: &mut Tape, xv: Var, gv: Var, bv: Var| -> Result<Var> {
                let y = if train {
                    tape.batch_norm_train(xv, gv, bv, BN_EPS)?.0
                } else {
                    tape.batch_norm_eval(xv, gv, bv, &[0.1, -0.2], &[0.5, 2.0], BN_EPS)?
                };
                Ok(weighted(tape, y, 22))
            };
            let e = grad_check(
                |tape, xv| {
                    let (g, b) = (tape.constant(gamma.clone()), tape.constant(beta.clone()));
                    run(tape, xv, g, b)
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(e < 1e-4, "x (train={train}): {e}");
            let e = grad_check(
                |tape, gv| {
                    let (xv, b) = (tape.constant(x.clone()), tape.constant(beta.clone()));
                    run(tape, xv, gv, b)
                },
                &gamma,
                1e-5,
            )
            .unwrap();
            assert!(e < 1e-4, "gamma (train={train}): {e}");
            let e = grad_check(
                |tape, bv| {
                    let (xv, g) = (tape.constant(x.clone()), tape.constant(gamma.clone()));
                    run(tape, xv, g, bv)
                },
                &beta,
                1e-5,
            )
            .unwrap();
            assert!(e < 1e-4, "beta (train={train}): {e}");
        }
    }

    #[test]
    fn grad_check_pools_relu_and_loss() {
        // distinct values: unique argmaxes, no entry near the relu kink
        let x = t(
            &[1, 2, 6],
            &[0.3, -1.2, 0.9, 2.1, -0.4, 0.6, 1.7, -0.8, 0.2, -2.3, 1.1, 0.45],
        );
        let e = grad_check(
            |tape, xv| {
                let y = tape.max_pool1d(xv, 3)?;
                Ok(weighted(tape, y, 31))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(e < 1e-4, "max pool: {e}");
        for out in [1, 3, 4, 9] {
            let e = grad_check(
                |tape, xv| {
                    let y = tape.adaptive_avg_pool1d(xv, out)?;
                    Ok(weighted(tape, y, 32))
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(e < 1e-4, "adaptive pool -> {out}: {e}");
        }
        let e = grad_check(
            |tape, xv| {
                let y = tape.relu(xv);
                Ok(tape.sum(y))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(e < 1e-6, "relu: {e}");
        let logits = random(&[3, 5], 33);
        let e = grad_check(|tape, z| tape.cross_entropy(z, &[0, 4, 2]), &logits, 1e-5).unwrap();
        assert!(e < 1e-4, "cross entropy: {e}");
    }
}
