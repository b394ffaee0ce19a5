use proptest::prelude::*;
use xtime_core::data::{generate_synthetic, split_by_repetition, SplitSpec, SynthConfig};
use xtime_core::layers::Mode;
use xtime_core::model::{Variant, XTimeNetwork, XTimeNetworkSpec};
use xtime_core::signal::{preprocess, PrepConfig, WindowConfig};
use xtime_core::train::{evaluate, TrainConfig, Trainer};
use xtime_core::Tensor;

/// Trainable scalars of a conv with bias plus a batch norm, written out by hand.
fn conv_bn(c_in: usize, c_out: usize, k: usize, groups: usize) -> usize {
    c_out * (c_in / groups) * k + c_out + 2 * c_out
}

fn closed_form(channels: usize, classes: usize, variant: Variant) -> usize {
    let filters = [16, 32, 64, 128];
    let mut total = 0;
    let mut c_in = channels;
    for &f in &filters {
        let mut m = c_in * f + f; // bottleneck
        for k in [11, 21, 41] {
            m += match variant {
                Variant::Separable => (f * k + f) + (f * f + f),
                Variant::Plain => f * f * k + f,
            };
        }
        m += c_in * f + f; // max-pool path 1x1
        m += 2 * 4 * f; // batch norm over the concatenation
        total += m;
        c_in = 4 * f;
    }
    total += conv_bn(channels, 4 * filters[1], 1, 1) + conv_bn(4 * filters[1], 4 * filters[3], 1, 1);
    total + conv_bn(512, 256, 1, 1) + conv_bn(256, 128, 1, 1) + conv_bn(128, classes, 1, 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn parameter_count_matches_closed_form(channels in 1usize..16, classes in 2usize..60, plain in any::<bool>()) {
        let variant = if plain { Variant::Plain } else { Variant::Separable };
        let spec = XTimeNetworkSpec { input_channels: channels, ..XTimeNetworkSpec::with_classes(classes).with_variant(variant) };
        let net = XTimeNetwork::new(spec, 0).unwrap();
        prop_assert_eq!(net.count_parameters(), closed_form(channels, classes, variant));
        let sum: usize = net.parameter_breakdown().iter().map(|(_, n)| n).sum();
        prop_assert_eq!(sum, net.count_parameters());
    }
}

#[test]
fn default_counts() {
    assert_eq!(closed_form(10, 52, Variant::Separable), 413_516);
    assert_eq!(closed_form(10, 52, Variant::Plain), 1_918_476);
}

#[test]
fn one_network_scores_every_window_length() {
    let mut net = XTimeNetwork::new(XTimeNetworkSpec::default(), 1).unwrap();
    for len in [1, 5, 10, 20, 49, 50, 51, 120] {
        let x = Tensor::new(vec![2, 10, len], (0..20 * len).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let y = net.predict(&x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), [2, 52]);
        assert!(y.is_finite());
    }
}

#[test]
fn synthetic_pipeline_learns_from_training_repetitions() {
    let rec = generate_synthetic(&SynthConfig {
        num_classes: 3,
        reps: 4,
        channels: 4,
        seed: 2,
        ..SynthConfig::default()
    })
    .unwrap();
    let cfg = PrepConfig {
        window: WindowConfig {
            step_ms: 200,
            ..WindowConfig::default()
        },
        split: SplitSpec::new([2]).unwrap(),
        ..PrepConfig::default()
    };
    let (ds, _) = preprocess(std::slice::from_ref(&rec), &cfg).unwrap();
    let (train, test) = split_by_repetition(&ds, &cfg.split).unwrap();
    assert_eq!(train.len() + test.len(), ds.len());
    assert!(test.repetitions().iter().all(|&r| r == 2));

    let spec = XTimeNetworkSpec {
        input_channels: 4,
        ..XTimeNetworkSpec::with_classes(3)
    };
    let mut net = XTimeNetwork::new(spec, 0).unwrap();
    let before = evaluate(&net, &test, 64).unwrap();
    let mut trainer = Trainer::new(&net, TrainConfig { batch_size: 16, ..TrainConfig::default() }).unwrap();
    for _ in 0..3 {
        trainer.run_epoch(&mut net, std::slice::from_ref(&train)).unwrap();
    }
    let after = evaluate(&net, &test, 64).unwrap();
    assert!(after.loss < before.loss, "{} -> {}", before.loss, after.loss);
    assert!(after.accuracy >= 0.9, "accuracy {}", after.accuracy);
}
