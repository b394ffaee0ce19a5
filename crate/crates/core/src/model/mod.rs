//! XceptionTime module and network builders, the plain-convolution variant,
//! parameter counting and whole-network gradient checks.

pub mod check;
pub mod module;
pub mod network;
pub mod spec;

pub use check::{check_network_gradients, check_network_gradients_on, ParamCheck};
pub use module::XTimeModule;
pub use network::XTimeNetwork;
pub use spec::{Variant, XTimeModuleSpec, XTimeNetworkSpec};

/// Builds the plain-convolution ("V2") counterpart of `spec`.
pub fn build_v2_network(spec: XTimeNetworkSpec, seed: u64) -> crate::Result<XTimeNetwork> {
    XTimeNetwork::new(spec.with_variant(Variant::Plain), seed)
}

/// Exact number of trainable scalars.
pub fn count_parameters(net: &XTimeNetwork) -> usize {
    net.count_parameters()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{Ctx, Mode};
    use crate::params::ParamStore;
    use crate::tape::Tape;
    use crate::tensor::Tensor;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Closed-form counts, written out layer by layer independently of the builders.
    fn conv(cin: usize, cout: usize, k: usize, groups: usize) -> usize {
        cout * (cin / groups) * k + cout
    }

    fn module_oracle(c: usize, f: usize, variant: Variant) -> usize {
        let branches: usize = [11, 21, 41]
            .iter()
            .map(|&k| match variant {
                Variant::Separable => conv(f, f, k, f) + conv(f, f, 1, 1),
                Variant::Plain => conv(f, f, k, 1),
            })
            .sum();
        conv(c, f, 1, 1) + branches + conv(c, f, 1, 1) + 2 * 4 * f
    }

    fn network_oracle(variant: Variant, classes: usize) -> usize {
        let modules = module_oracle(10, 16, variant)
            + module_oracle(64, 32, variant)
            + module_oracle(128, 64, variant)
            + module_oracle(256, 128, variant);
        let residuals = conv(10, 128, 1, 1) + 2 * 128 + conv(128, 512, 1, 1) + 2 * 512;
        let head = conv(512, 256, 1, 1) + 2 * 256 + conv(256, 128, 1, 1) + 2 * 128 + conv(128, classes, 1, 1) + 2 * classes;
        modules + residuals + head
    }

    fn random_input(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn run_module(m: &XTimeModule, store: &mut ParamStore, x: Tensor) -> Tensor {
        let mut tape = Tape::new();
        let binds = store.bind(&mut tape);
        let xv = tape.constant(x);
        let mut ctx = Ctx {
            tape: &mut tape,
            binds: &binds,
            store,
            mode: Mode::Train,
        };
        let y = m.forward(&mut ctx, xv).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn module_shapes_and_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let m = XTimeModule::new(&mut store, "m", XTimeModuleSpec::new(10, 16), &mut rng).unwrap();
        assert_eq!(m.param_count(), 2512);
        assert_eq!(store.num_trainable(), module_oracle(10, 16, Variant::Separable));
        let y = run_module(&m, &mut store, random_input(&[2, 10, 20], 1));
        assert_eq!(y.shape(), &[2, 64, 20]);

        let mut store = ParamStore::new();
        let m = XTimeModule::new(&mut store, "m", XTimeModuleSpec::new(64, 32), &mut rng).unwrap();
        for l in [5, 10, 15, 20] {
            let y = run_module(&m, &mut store, random_input(&[2, 64, l], l as u64));
            assert_eq!(y.shape(), &[2, 128, l]);
        }
        assert!(XTimeModule::new(&mut store, "z", XTimeModuleSpec::new(0, 4), &mut rng).is_err());
    }

    #[test]
    fn exact_parameter_counts() {
        let base = XTimeNetwork::new(XTimeNetworkSpec::default(), 0).unwrap();
        let v2 = build_v2_network(XTimeNetworkSpec::default(), 0).unwrap();
        assert_eq!(count_parameters(&base), network_oracle(Variant::Separable, 52));
        assert_eq!(count_parameters(&v2), network_oracle(Variant::Plain, 52));
        assert_eq!(count_parameters(&base), 413_516);
        assert_eq!(count_parameters(&v2), 1_918_476);
        assert!(count_parameters(&v2) > 4 * count_parameters(&base));
        let breakdown_total: usize = base.parameter_breakdown().iter().map(|(_, n)| n).sum();
        assert_eq!(breakdown_total, 413_516);
        let comps = base.component_counts();
        assert_eq!(comps["module1"], 2512);
        assert_eq!(comps["residual2"], 128 * 512 + 512 + 1024);
    }

    #[test]
    fn channel_bookkeeping_and_residual_taps() {
        let spec = XTimeNetworkSpec::default();
        assert_eq!(spec.module_out_channels(), [64, 128, 256, 512]);
        let net = XTimeNetwork::new(spec, 1).unwrap();
        for (m, f) in net.modules().iter().zip([16, 32, 64, 128]) {
            assert_eq!(m.spec.out_channels(), 4 * f);
        }
        let taps: Vec<_> = net
            .shortcuts()
            .iter()
            .map(|s| (s.conv.config.in_channels, s.conv.config.out_channels))
            .collect();
        assert_eq!(taps, [(10, 128), (128, 512)]);
        let head: Vec<_> = net.head().iter().map(|h| h.conv.config.out_channels).collect();
        assert_eq!(head, [256, 128, 52]);
    }

    #[test]
    fn any_window_length_same_network() {
        let mut net = XTimeNetwork::new(XTimeNetworkSpec::default(), 2).unwrap();
        for l in [1, 5, 20] {
            let y = net.predict(&random_input(&[4, 10, l], l as u64), Mode::Eval).unwrap();
            assert_eq!(y.shape(), &[4, 52]);
        }
        let y = net.predict(&random_input(&[4, 10, 5], 9), Mode::Train).unwrap();
        assert_eq!(y.shape(), &[4, 52]);
        assert!(net.predict(&random_input(&[4, 9, 5], 9), Mode::Eval).is_err());
    }

    #[test]
    fn zeroed_final_bn_gives_uniform_softmax() {
        let mut net = XTimeNetwork::new(XTimeNetworkSpec::default(), 3).unwrap();
        let last = net.head().last().unwrap().bn.clone();
        net.store_mut().param_mut(last.gamma).data_mut().fill(0.0);
        net.store_mut().param_mut(last.beta).data_mut().fill(0.0);
        let mut tape = Tape::new();
        let x = random_input(&[2, 10, 20], 4);
        let (loss, logits, _) = net.loss(&mut tape, &x, &[0, 7], Mode::Train).unwrap();
        assert!(tape.data(logits).iter().all(|&v| v == 0.0));
        assert!((tape.data(loss)[0] - libm::log(52.0)).abs() < 1e-12);
    }

    #[test]
    fn v2_has_same_topology() {
        let mut base = XTimeNetwork::new(XTimeNetworkSpec::default(), 5).unwrap();
        let mut v2 = build_v2_network(XTimeNetworkSpec::default(), 5).unwrap();
        let x = random_input(&[2, 10, 20], 6);
        assert_eq!(
            base.predict(&x, Mode::Eval).unwrap().shape(),
            v2.predict(&x, Mode::Eval).unwrap().shape()
        );
        assert!(v2.store().find_param("module1.bottleneck.weight").is_some());
        assert!(v2.store().find_param("module1.branch_k41.weight").is_some());
    }

    #[test]
    fn seeded_build_is_deterministic() {
        let a = XTimeNetwork::new(XTimeNetworkSpec::default(), 11).unwrap();
        let b = XTimeNetwork::new(XTimeNetworkSpec::default(), 11).unwrap();
        let c = XTimeNetwork::new(XTimeNetworkSpec::default(), 12).unwrap();
        assert_eq!(a.store(), b.store());
        assert_ne!(a.store(), c.store());
        let x = random_input(&[3, 10, 15], 0);
        let (mut a, mut b) = (a, b);
        let ya = a.predict(&x, Mode::Train).unwrap();
        let yb = b.predict(&x, Mode::Train).unwrap();
        assert_eq!(ya.data(), yb.data());
    }

    #[test]
    fn he_uniform_bounds() {
        let net = XTimeNetwork::new(XTimeNetworkSpec::default(), 0).unwrap();
        for p in net.store().params() {
            let shape = p.tensor.shape();
            if p.name.ends_with(".weight") {
                let bound = libm::sqrt(6.0 / (shape[1] * shape[2]) as f64);
                assert!(p.tensor.data().iter().all(|v| v.abs() <= bound), "{}", p.name);
            } else if p.name.ends_with(".bias") || p.name.ends_with(".beta") {
                assert!(p.tensor.data().iter().all(|&v| v == 0.0));
            } else {
                assert!(p.tensor.data().iter().all(|&v| v == 1.0));
            }
        }
    }

    #[test]
    fn small_network_gradients_match_finite_differences() {
        let spec = XTimeNetworkSpec {
            input_channels: 3,
            module_filters: alloc::vec![2, 3],
            num_classes: 4,
            head_mid_length: 6,
            head_hidden: alloc::vec![5],
            ..XTimeNetworkSpec::default()
        };
        let net = XTimeNetwork::new(spec, 7).unwrap();
        let x = random_input(&[3, 3, 9], 8);
        for mode in [Mode::Train, Mode::Eval] {
            let report = check_network_gradients(&net, &x, &[0, 3, 1], mode, 20, 1e-5, 9).unwrap();
            for r in &report {
                assert!(r.passes(1e-4, 1e-7), "{mode:?} {r:?}");
            }
        }
    }
}
