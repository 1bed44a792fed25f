mod common;

use ltadapt::eval::{
    base_to_new_eval, mean_class_accuracy, prepare_benchmark, transfer_eval, zero_shot_eval, BenchmarkData,
    BenchmarkSpec, LabelSpaceMode,
};
use ltadapt::feature_store::FeaturePack;
use ltadapt::linalg::Mat;
use ltadapt::model::{predict, read_checkpoint, write_checkpoint, zero_shot_predict, ModelParams};
use ltadapt::prototypes::{build_prototypes, VirtualInit};
use ltadapt::rng::Rng;
use ltadapt::sampling::{exp_decay_counts, few_shot_sample, split_base_new, subsample, HeadOrder, SplitPolicy};
use ltadapt::training::{fit, init_model, TrainConfig};
use proptest::prelude::*;

fn small_benchmark(seed: u64) -> BenchmarkData {
    let spec = BenchmarkSpec {
        num_classes: 8,
        dim: 16,
        train_per_class: 40,
        test_per_class: 12,
        max_per_class: 40,
        ratio: 10.0,
        ..BenchmarkSpec::default()
    };
    prepare_benchmark(&spec, seed).unwrap()
}

fn quick_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 5,
        batch_size: 32,
        learning_rate: 0.05,
        heads: 2,
        seed,
        ..TrainConfig::default()
    }
}

/// Mean-class accuracy of argmax `cos(P_I x, P_T T)` over all classes.
fn textual_oracle(x: &Mat, text: &Mat, params: &ModelParams, labels: &[usize]) -> f64 {
    let unit = |m: &Mat| {
        let mut out = m.clone();
        for i in 0..out.rows() {
            let n = out.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            out.row_mut(i).iter_mut().for_each(|v| *v /= n);
        }
        out
    };
    let xs = unit(&x.matmul(&params.proj_image.transpose()));
    let ts = unit(&text.matmul(&params.proj_text.transpose()));
    let k = text.rows();
    let preds: Vec<usize> = (0..xs.rows())
        .map(|i| {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for c in 0..k {
                let v: f64 = xs.row(i).iter().zip(ts.row(c)).map(|(a, b)| a * b).sum();
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            best
        })
        .collect();
    let all: Vec<usize> = (0..k).collect();
    mean_class_accuracy(&preds, labels, &all).unwrap()
}

fn labels(pack: &FeaturePack) -> Vec<usize> {
    pack.labels.iter().map(|&l| l as usize).collect()
}

#[test]
fn subsample_histogram_matches_profile_and_drops_new_classes() {
    let data = small_benchmark(1);
    let hist = data.train.histogram();
    let profile = exp_decay_counts(data.split.base_ids.len(), 40, 10.0).unwrap();
    for (b, &c) in data.split.base_ids.iter().enumerate() {
        assert_eq!(hist[c], profile.counts[b]);
    }
    for &c in &data.split.new_ids {
        assert_eq!(hist[c], 0);
    }
}

#[test]
fn subsample_is_deterministic_and_reports_shortfalls() {
    let data = small_benchmark(2);
    let split = split_base_new(&data.test.class_names, &SplitPolicy::FirstHalf).unwrap();
    let profile = exp_decay_counts(split.base_ids.len(), 50, 5.0).unwrap();
    let (a, ma) = subsample(&data.test, &profile, &split, HeadOrder::Random, 11).unwrap();
    let (b, mb) = subsample(&data.test, &profile, &split, HeadOrder::Random, 11).unwrap();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    // The test pack has 12 per class, so the head (50 requested) is short.
    let short: Vec<_> = ma.shortfalls().collect();
    assert!(!short.is_empty());
    assert!(short.iter().all(|d| d.actual == d.available && d.available == 12));
}

#[test]
fn few_shot_draws_exactly_the_requested_shots() {
    let data = small_benchmark(3);
    let (pack, manifest) = few_shot_sample(&data.test, 5, 0).unwrap();
    assert!(pack.histogram().iter().all(|&n| n == 5));
    assert_eq!(manifest.shortfalls().count(), 0);
}

#[test]
fn prototypes_are_unit_rows_and_virtual_starts_near_text() {
    let data = small_benchmark(4);
    let protos = build_prototypes(&data.train, &data.text, &data.split, VirtualInit::default(), 0).unwrap();
    for m in [&protos.visual, &protos.textual, &protos.virtual_] {
        for n in m.row_norms() {
            assert!((n - 1.0).abs() < 1e-9);
        }
    }
    for (j, &c) in data.split.new_ids.iter().enumerate() {
        let cos: f64 = protos.virtual_.row(j).iter().zip(protos.textual.row(c)).map(|(a, b)| a * b).sum();
        assert!(cos > 0.99, "virtual prototype {j} drifted from its text: cos {cos}");
    }
}

#[test]
fn prediction_is_invariant_to_positive_rescaling_of_images() {
    let data = small_benchmark(5);
    let model = fit(&data.train, &data.text, &data.split, &quick_cfg(5)).unwrap().model;
    let x = data.test.to_mat();
    let all: Vec<usize> = (0..data.split.num_classes()).collect();
    let base = predict(&x, &model.prototypes, &model.params, &model.config, &all).unwrap();
    for c in [1e-3, 0.5, 7.0, 1e4] {
        let scaled = predict(&x.scaled(c), &model.prototypes, &model.params, &model.config, &all).unwrap();
        assert_eq!(base, scaled, "scale {c}");
    }
}

#[test]
fn identity_initialized_model_transfers_like_zero_shot() {
    let data = small_benchmark(6);
    let cfg = quick_cfg(6);
    let protos = build_prototypes(&data.train, &data.text, &data.split, cfg.virtual_init, cfg.seed).unwrap();
    let model = init_model(protos, data.text.class_names.clone(), &cfg).unwrap();
    let report = transfer_eval(&model, &data.text, &data.test).unwrap();
    let preds = zero_shot_predict(&data.test.to_mat(), &data.text.to_mat()).unwrap();
    let all: Vec<usize> = (0..data.text.num_classes()).collect();
    let expected = mean_class_accuracy(&preds, &labels(&data.test), &all).unwrap();
    assert!((report.accuracy - expected).abs() < 1e-12);
}

#[test]
fn self_transfer_matches_the_textual_path_of_the_trained_model() {
    let data = small_benchmark(7);
    let cfg = TrainConfig {
        use_attention: false,
        ..quick_cfg(7)
    };
    let model = fit(&data.train, &data.text, &data.split, &cfg).unwrap().model;
    let report = transfer_eval(&model, &data.text, &data.test).unwrap();
    let expected = textual_oracle(&data.test.to_mat(), &data.text.to_mat(), &model.params, &labels(&data.test));
    assert!((report.accuracy - expected).abs() < 1e-12);
}

#[test]
fn transfer_rejects_dimension_mismatch() {
    let data = small_benchmark(8);
    let other = small_benchmark(8);
    let model = fit(&data.train, &data.text, &data.split, &TrainConfig { epochs: 0, ..quick_cfg(8) })
        .unwrap()
        .model;
    let mut text = other.text.clone();
    text.dim = 8;
    text.features.truncate(text.class_names.len() * 8);
    let err = transfer_eval(&model, &text, &other.test).unwrap_err();
    assert!(matches!(err, ltadapt::Error::Format { .. }), "{err:?}");
}

#[test]
fn zero_epochs_leave_the_initialization_untouched() {
    let data = small_benchmark(9);
    let cfg = TrainConfig { epochs: 0, ..quick_cfg(9) };
    let protos = build_prototypes(&data.train, &data.text, &data.split, cfg.virtual_init, cfg.seed).unwrap();
    let init = init_model(protos, data.text.class_names.clone(), &cfg).unwrap();
    let outcome = fit(&data.train, &data.text, &data.split, &cfg).unwrap();
    assert!(outcome.history.is_empty());
    assert_eq!(outcome.model, init);
}

#[test]
fn ablations_only_change_their_own_tensors() {
    let data = small_benchmark(10);
    let cfg = quick_cfg(10);
    let protos = build_prototypes(&data.train, &data.text, &data.split, cfg.virtual_init, cfg.seed).unwrap();
    let init = init_model(protos, data.text.class_names.clone(), &cfg).unwrap();

    let no_attn = fit(&data.train, &data.text, &data.split, &TrainConfig { use_attention: false, ..cfg.clone() })
        .unwrap()
        .model;
    for (a, b) in [
        (&no_attn.params.query, &init.params.query),
        (&no_attn.params.key, &init.params.key),
        (&no_attn.params.value, &init.params.value),
        (&no_attn.params.output, &init.params.output),
    ] {
        assert_eq!(a, b);
    }
    assert_ne!(no_attn.params.proj_image, init.params.proj_image);

    let no_virtual = fit(&data.train, &data.text, &data.split, &TrainConfig { use_virtual: false, ..cfg.clone() })
        .unwrap()
        .model;
    assert_eq!(no_virtual.prototypes, init.prototypes);

    let full = fit(&data.train, &data.text, &data.split, &cfg).unwrap().model;
    assert_ne!(full.prototypes.virtual_, init.prototypes.virtual_);
    assert_eq!(full.prototypes.visual, init.prototypes.visual);
    assert_eq!(full.prototypes.textual, init.prototypes.textual);
}

#[test]
fn trained_checkpoint_round_trips_and_scores_identically() {
    let data = small_benchmark(11);
    let model = fit(&data.train, &data.text, &data.split, &quick_cfg(11)).unwrap().model;
    let mut bytes = Vec::new();
    write_checkpoint(&model, &mut bytes).unwrap();
    assert_eq!(&bytes[..4], b"CNDM");
    let back = read_checkpoint(bytes.as_slice()).unwrap();
    let a = base_to_new_eval(&model, &data.test, LabelSpaceMode::Separate).unwrap();
    let b = base_to_new_eval(&back, &data.test, LabelSpaceMode::Separate).unwrap();
    // Parameters are stored as f32, so scores may differ only through rounding.
    assert!((a.harmonic.unwrap() - b.harmonic.unwrap()).abs() < 0.02);
    let mut again = Vec::new();
    write_checkpoint(&back, &mut again).unwrap();
    assert_eq!(bytes, again);
}

#[test]
fn report_harmonic_is_recomputed_from_its_parts() {
    let data = small_benchmark(12);
    for mode in [LabelSpaceMode::Separate, LabelSpaceMode::Joint] {
        let r = zero_shot_eval(&data.test, &data.text, &data.split, mode).unwrap();
        let (b, n) = (r.base_acc.unwrap(), r.new_acc.unwrap());
        let h = if b + n == 0.0 { 0.0 } else { 2.0 * b * n / (b + n) };
        assert!((r.harmonic.unwrap() - h).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exp_decay_is_monotone_with_fixed_endpoints(kb in 2usize..40, n_max in 1usize..500, ratio in 1.0f64..200.0) {
        let p = exp_decay_counts(kb, n_max, ratio).unwrap();
        prop_assert_eq!(p.counts.len(), kb);
        prop_assert_eq!(p.counts[0], n_max);
        prop_assert!(p.counts.windows(2).all(|w| w[0] >= w[1]));
        let tail = ((n_max as f64) / ratio).round().max(1.0) as usize;
        prop_assert_eq!(p.counts[kb - 1], tail);
        prop_assert!(p.counts.iter().all(|&c| c >= 1));
    }

    #[test]
    fn mean_class_accuracy_ignores_duplicating_a_class(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let k = 2 + rng.below(5);
        let n = k * 3 + rng.below(20);
        let labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.below(k) }).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let all: Vec<usize> = (0..k).collect();
        let base = mean_class_accuracy(&preds, &labels, &all).unwrap();
        let target = rng.below(k);
        let (mut l2, mut p2) = (labels.clone(), preds.clone());
        for i in 0..n {
            if labels[i] == target {
                l2.push(labels[i]);
                p2.push(preds[i]);
            }
        }
        prop_assert!((mean_class_accuracy(&p2, &l2, &all).unwrap() - base).abs() < 1e-12);
    }
}
