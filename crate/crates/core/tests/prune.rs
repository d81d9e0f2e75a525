//! Filter scoring, keep-count arithmetic, surgery soundness, and the
//! iterative schedule.

use std::collections::BTreeSet;

use cropchain_core::cost_model::{profile_model, EnergyConstants};
use cropchain_core::nn::{
    reference_fcn, reference_prunable_layers, train, Dataset, Layer, LayerKind, ModelGraph,
    TrainConfig,
};
use cropchain_core::pruning::{
    iterative_prune, keep_count, prune_step, prune_step_detailed, score_filters, PruneConfig,
    PruneData,
};
use cropchain_core::segmentation::build_dataset;
use cropchain_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn set(layers: &[usize]) -> BTreeSet<usize> {
    layers.iter().copied().collect()
}

/// 1→`mid` 1×1 conv, ReLU, `mid`→2 1×1 conv, softmax. The first conv is
/// the only prunable layer; pruning it shrinks both convs consistently.
fn bottleneck_model(mid: usize, size: usize) -> ModelGraph {
    let mut m = ModelGraph {
        layers: vec![
            Layer::new(LayerKind::Conv2d {
                in_channels: 1,
                out_channels: mid,
                kernel: (1, 1),
                stride: 1,
                padding: 0,
            }),
            Layer::new(LayerKind::ReLU),
            Layer::new(LayerKind::Conv2d {
                in_channels: mid,
                out_channels: 2,
                kernel: (1, 1),
                stride: 1,
                padding: 0,
            }),
            Layer::new(LayerKind::SoftmaxPerPixel),
        ],
        num_classes: 2,
        input_shape: (1, size, size),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(500 + mid as u64);
    m.init_params(&mut rng);
    m.validate().unwrap();
    m
}

fn tiny_data(size: usize) -> (Dataset, Dataset) {
    let train = build_dataset(60, 4, size, &[0.3, 0.7]).unwrap();
    let eval = build_dataset(61, 4, size, &[0.4, 0.6]).unwrap();
    (train, eval)
}

#[test]
fn keep_count_follows_the_floor_rule() {
    assert_eq!(keep_count(64, 0.2), 52);
    assert_eq!(keep_count(52, 0.2), 42);
    assert_eq!(keep_count(42, 0.2), 34);
    assert_eq!(keep_count(64, 0.9), 7);
    assert_eq!(keep_count(7, 0.9), 1);
    assert_eq!(keep_count(1, 0.9), 1);
    assert_eq!(keep_count(5, 0.0), 5);
    // Cross-check against exact integer arithmetic for tenth ratios:
    // floor(p·n) == floor(k·n/10) when p = k/10 exactly in binary is
    // false, so compare against the rounded-rational form instead.
    for n in 1..=128usize {
        for k in 1..=9usize {
            let p = k as f64 / 10.0;
            let expect = n - ((p * n as f64).floor() as usize);
            assert_eq!(keep_count(n, p), expect.max(1), "n={n} k={k}");
        }
    }
}

#[test]
fn scores_rank_filters_by_l1_norm_ascending() {
    let mut model = bottleneck_model(4, 4);
    {
        let params = model.layers[0].params.as_mut().unwrap();
        let norms = [0.1, 5.0, 2.0, 0.3];
        for (f, &v) in norms.iter().enumerate() {
            *params.weight.at_mut(f, 0, 0, 0) = v;
            params.bias[f] = 100.0; // bias must not influence the score
        }
    }
    let scores = score_filters(&model, 0).unwrap();
    let order: Vec<usize> = scores.iter().map(|s| s.filter_index).collect();
    assert_eq!(order, vec![0, 3, 2, 1]);
    assert_eq!(scores[0].l1_norm, 0.1);
    assert_eq!(scores[3].l1_norm, 5.0);
    assert!(scores.iter().all(|s| s.layer_index == 0));
}

#[test]
fn score_ties_resolve_by_filter_index() {
    let mut model = bottleneck_model(3, 4);
    {
        let params = model.layers[0].params.as_mut().unwrap();
        for f in 0..3 {
            *params.weight.at_mut(f, 0, 0, 0) = 1.5;
        }
    }
    let order: Vec<usize> =
        score_filters(&model, 0).unwrap().iter().map(|s| s.filter_index).collect();
    assert_eq!(order, vec![0, 1, 2]);
}

#[test]
fn l1_norm_sums_absolute_weights_of_one_filter() {
    let mut model = bottleneck_model(1, 4);
    // Rebuild layer 0 as a 1→1 conv with a 2×2 kernel to hand-compute.
    model.layers[0] = Layer::with_zero_params(LayerKind::Conv2d {
        in_channels: 1,
        out_channels: 1,
        kernel: (2, 2),
        stride: 1,
        padding: 0,
    });
    model.layers[2] = Layer::with_zero_params(LayerKind::Conv2d {
        in_channels: 1,
        out_channels: 2,
        kernel: (1, 1),
        stride: 1,
        padding: 0,
    });
    {
        let params = model.layers[0].params.as_mut().unwrap();
        *params.weight.at_mut(0, 0, 0, 0) = 1.0;
        *params.weight.at_mut(0, 0, 0, 1) = -2.0;
        *params.weight.at_mut(0, 0, 1, 0) = 3.0;
        *params.weight.at_mut(0, 0, 1, 1) = -4.0;
    }
    let scores = score_filters(&model, 0).unwrap();
    assert_eq!(scores.len(), 1);
    assert_eq!(scores[0].l1_norm, 10.0);
}

#[test]
fn scoring_rejects_non_conv_layers() {
    let model = bottleneck_model(4, 4);
    assert!(matches!(score_filters(&model, 1), Err(Error::NotPrunableLayer(1))));
    assert!(score_filters(&model, 99).is_err());
}

#[test]
fn rank_order_is_invariant_under_positive_weight_scaling() {
    let model = bottleneck_model(8, 4);
    let before: Vec<usize> =
        score_filters(&model, 0).unwrap().iter().map(|s| s.filter_index).collect();
    let mut scaled = model.clone();
    {
        let params = scaled.layers[0].params.as_mut().unwrap();
        for w in params.weight.data_mut() {
            *w *= 7.25;
        }
    }
    let after: Vec<usize> =
        score_filters(&scaled, 0).unwrap().iter().map(|s| s.filter_index).collect();
    assert_eq!(after, before);
}

#[test]
fn zero_ratio_prune_is_an_identity() {
    let model = bottleneck_model(4, 4);
    let (pruned, detail) = prune_step_detailed(&model, 0.0, &set(&[0])).unwrap();
    assert_eq!(pruned, model);
    assert_eq!(detail[0].filters_before, 4);
    assert_eq!(detail[0].filters_after, 4);
    assert!(detail[0].removed.is_empty());
}

#[test]
fn pruning_removes_the_weakest_filters_and_reindexes_consumers() {
    let mut model = bottleneck_model(4, 4);
    {
        let params = model.layers[0].params.as_mut().unwrap();
        for f in 0..4 {
            *params.weight.at_mut(f, 0, 0, 0) = [0.1, 5.0, 2.0, 0.3][f];
            params.bias[f] = f as f64;
        }
    }
    let (pruned, detail) = prune_step_detailed(&model, 0.5, &set(&[0])).unwrap();
    assert_eq!(detail.len(), 1);
    assert_eq!(detail[0].layer_index, 0);
    assert_eq!(detail[0].filters_before, 4);
    assert_eq!(detail[0].filters_after, 2);
    assert_eq!(detail[0].removed, vec![0, 3]);

    // Survivors keep their weights and biases in original relative order.
    let kept = pruned.layers[0].params.as_ref().unwrap();
    assert_eq!(kept.weight.at(0, 0, 0, 0), 5.0);
    assert_eq!(kept.weight.at(1, 0, 0, 0), 2.0);
    assert_eq!(kept.bias, vec![1.0, 2.0]);
    // The consumer conv lost the matching input planes.
    let consumer = pruned.layers[2].params.as_ref().unwrap();
    assert_eq!(consumer.weight.shape(), [2, 2, 1, 1]);
    let orig = model.layers[2].params.as_ref().unwrap();
    assert_eq!(consumer.weight.at(0, 0, 0, 0), orig.weight.at(0, 1, 0, 0));
    assert_eq!(consumer.weight.at(1, 1, 0, 0), orig.weight.at(1, 2, 0, 0));
    pruned.validate().unwrap();
}

#[test]
fn floor_of_one_filter_is_respected() {
    let model = bottleneck_model(3, 4);
    let (pruned, detail) = prune_step_detailed(&model, 0.9, &set(&[0])).unwrap();
    assert_eq!(detail[0].filters_after, 1);
    assert_eq!(pruned.layers[0].params.as_ref().unwrap().bias.len(), 1);
}

#[test]
fn removing_a_dead_filter_preserves_the_function_exactly() {
    // Zero one filter's weights and bias; its ReLU output is identically
    // zero, so the consumer sees no contribution and the pruned network
    // computes the same probabilities bit for bit.
    let size = 8;
    let mut model = bottleneck_model(4, size);
    {
        let params = model.layers[0].params.as_mut().unwrap();
        *params.weight.at_mut(2, 0, 0, 0) = 0.0;
        params.bias[2] = 0.0;
    }
    let (pruned, detail) = prune_step_detailed(&model, 0.25, &set(&[0])).unwrap();
    assert_eq!(detail[0].removed, vec![2]);

    let field = cropchain_core::segmentation::generate_field(70, size, 0.5).unwrap();
    let full = model.forward(&field.pixels).unwrap();
    let cut = pruned.forward(&field.pixels).unwrap();
    assert_eq!(full.data(), cut.data());
}

#[test]
fn grouped_layers_prune_together_with_identical_removals() {
    // On the reference net, pool-7 output feeds the skip add at 13, so
    // encoder layer 6 and the transposed conv at 12 share channel count.
    let mut model = reference_fcn();
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    model.init_params(&mut rng);
    let (pruned, detail) = prune_step_detailed(&model, 0.3, &reference_prunable_layers()).unwrap();
    let by_layer: std::collections::BTreeMap<usize, _> =
        detail.iter().map(|d| (d.layer_index, d)).collect();
    assert_eq!(by_layer[&6].removed, by_layer[&12].removed);
    assert_eq!(by_layer[&6].filters_after, by_layer[&12].filters_after);
    assert_eq!(by_layer[&0].filters_after, keep_count(16, 0.3));
    assert_eq!(by_layer[&9].filters_after, keep_count(128, 0.3));
    pruned.validate().unwrap();
    // The logits layer keeps both classes but loses the pruned inputs.
    let logits_weight = &pruned.layers[15].params.as_ref().unwrap().weight;
    assert_eq!(logits_weight.shape()[0], 2);
    assert_eq!(logits_weight.shape()[1], by_layer[&6].filters_after);
}

#[test]
fn listing_half_of_a_coupled_group_skips_the_group() {
    let mut model = reference_fcn();
    let mut rng = ChaCha8Rng::seed_from_u64(82);
    model.init_params(&mut rng);
    // Layer 6 is coupled to layer 12 through the skip connection; asking
    // for 6 alone must leave both at full width rather than desynchronize.
    let (pruned, detail) = prune_step_detailed(&model, 0.5, &set(&[0, 6])).unwrap();
    let touched: Vec<usize> = detail.iter().map(|d| d.layer_index).collect();
    assert_eq!(touched, vec![0]);
    assert_eq!(detail[0].filters_after, 8);
    for idx in [6usize, 12] {
        assert_eq!(pruned.layers[idx].params.as_ref().unwrap().bias.len(), 64, "layer {idx}");
    }
    pruned.validate().unwrap();
}

#[test]
fn the_logits_layer_cannot_be_pruned() {
    let mut model = reference_fcn();
    let mut rng = ChaCha8Rng::seed_from_u64(83);
    model.init_params(&mut rng);
    assert!(matches!(
        prune_step(&model, 0.5, &set(&[15])),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn parameterless_models_cannot_be_pruned() {
    let descriptor = cropchain_core::nn::vgg16_fcn_descriptor();
    assert!(prune_step(&descriptor, 0.5, &set(&[0])).is_err());
}

#[test]
fn invalid_prune_arguments_are_rejected() {
    let model = bottleneck_model(4, 4);
    assert!(prune_step(&model, 1.0, &set(&[0])).is_err());
    assert!(prune_step(&model, -0.1, &set(&[0])).is_err());
    assert!(prune_step(&model, 0.5, &set(&[])).is_err());
    assert!(matches!(
        prune_step(&model, 0.5, &set(&[1])),
        Err(Error::NotPrunableLayer(1))
    ));
}

#[test]
fn iteration_schedule_compounds_the_keep_rule() {
    let wide = bottleneck_model(64, 8);
    let (train_set, eval_set) = tiny_data(8);
    let data = PruneData {
        train: &train_set,
        eval: &eval_set,
        fine_tune: TrainConfig { epochs: 1, learning_rate: 1e-3, batch_size: 4, shuffle_seed: 9 },
        energy: EnergyConstants::default(),
    };
    for (ratio, widths) in [(0.2, [52usize, 42, 34]), (0.9, [7, 1, 1])] {
        let cfg = PruneConfig {
            ratio,
            iterations: 3,
            fine_tune_epochs_per_iter: 1,
            prunable_layers: set(&[0]),
        };
        let stages = iterative_prune(&wide, &cfg, &data).unwrap();
        assert_eq!(stages.len(), 3);
        for (stage, &want) in stages.iter().zip(&widths) {
            let got = stage.model.layers[0].params.as_ref().unwrap().bias.len();
            assert_eq!(got, want, "ratio {ratio} iteration {}", stage.iteration);
            assert_eq!(stage.record.layers[0].filters_after, want);
            assert!(stage.record.accuracy.is_finite());
        }
        // Profiles shrink strictly while widths still shrink.
        let energy = EnergyConstants::default();
        let base_profile = profile_model(&wide, &energy).unwrap();
        let mut last = base_profile.flops;
        for stage in &stages {
            let flops = stage.record.profile.flops;
            assert!(flops <= last);
            if stage.record.layers[0].filters_before != stage.record.layers[0].filters_after {
                assert!(flops < last);
            }
            last = flops;
        }
    }
}

#[test]
fn single_iteration_matches_one_raw_step_before_tuning() {
    let wide = bottleneck_model(16, 8);
    let (train_set, eval_set) = tiny_data(8);
    let data = PruneData {
        train: &train_set,
        eval: &eval_set,
        fine_tune: TrainConfig { epochs: 1, learning_rate: 1e-3, batch_size: 4, shuffle_seed: 9 },
        energy: EnergyConstants::default(),
    };
    let cfg = PruneConfig {
        ratio: 0.5,
        iterations: 1,
        fine_tune_epochs_per_iter: 0, // no tuning → pure surgery
        prunable_layers: set(&[0]),
    };
    let stages = iterative_prune(&wide, &cfg, &data).unwrap();
    let (raw, _) = prune_step_detailed(&wide, 0.5, &set(&[0])).unwrap();
    assert_eq!(stages[0].model, raw);
}

#[test]
fn iterative_prune_is_deterministic() {
    let wide = bottleneck_model(8, 8);
    let (train_set, eval_set) = tiny_data(8);
    let data = PruneData {
        train: &train_set,
        eval: &eval_set,
        fine_tune: TrainConfig { epochs: 2, learning_rate: 1e-3, batch_size: 4, shuffle_seed: 9 },
        energy: EnergyConstants::default(),
    };
    let cfg = PruneConfig {
        ratio: 0.3,
        iterations: 2,
        fine_tune_epochs_per_iter: 2,
        prunable_layers: set(&[0]),
    };
    let a = iterative_prune(&wide, &cfg, &data).unwrap();
    let b = iterative_prune(&wide, &cfg, &data).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.model, y.model);
        assert_eq!(x.record.accuracy, y.record.accuracy);
    }
}

#[test]
fn surgery_keeps_the_reference_net_well_formed_across_the_grid() {
    let mut base = reference_fcn();
    let mut rng = ChaCha8Rng::seed_from_u64(84);
    base.init_params(&mut rng);
    let prunable = reference_prunable_layers();
    let energy = EnergyConstants::default();
    let base_profile = profile_model(&base, &energy).unwrap();
    for p in [0.1, 0.5, 0.9] {
        let mut current = base.clone();
        let mut last_flops = base_profile.flops;
        for itr in 1..=3 {
            current = prune_step(&current, p, &prunable).unwrap();
            current.validate().unwrap();
            let profile = profile_model(&current, &energy).unwrap();
            assert!(
                profile.flops < last_flops || current.filter_counts() == base.filter_counts(),
                "p={p} itr={itr}"
            );
            last_flops = profile.flops;
            // The pruned net still runs end to end.
            let field = cropchain_core::segmentation::generate_field(85, 32, 0.5).unwrap();
            let out = current.forward(&field.pixels).unwrap();
            assert_eq!(out.shape(), [1, 2, 32, 32]);
        }
    }
}

#[test]
fn fine_tuning_runs_inside_the_loop() {
    // With tuning enabled the stage model must differ from raw surgery.
    let wide = bottleneck_model(8, 8);
    let (train_set, eval_set) = tiny_data(8);
    let data = PruneData {
        train: &train_set,
        eval: &eval_set,
        fine_tune: TrainConfig { epochs: 3, learning_rate: 1e-2, batch_size: 4, shuffle_seed: 9 },
        energy: EnergyConstants::default(),
    };
    let cfg = PruneConfig {
        ratio: 0.5,
        iterations: 1,
        fine_tune_epochs_per_iter: 3,
        prunable_layers: set(&[0]),
    };
    let stages = iterative_prune(&wide, &cfg, &data).unwrap();
    let (raw, _) = prune_step_detailed(&wide, 0.5, &set(&[0])).unwrap();
    assert_ne!(stages[0].model, raw);
    assert_eq!(stages[0].model.filter_counts(), raw.filter_counts());
}

#[test]
fn accuracy_is_evaluated_on_the_eval_split() {
    // Train a tiny model until it memorizes, then prune nothing (p≈0 with
    // one filter floor) — recorded accuracy equals a direct evaluation.
    let size = 8;
    let (train_set, eval_set) = tiny_data(size);
    let model = bottleneck_model(4, size);
    let tuned = train(
        &model,
        &train_set,
        &TrainConfig { epochs: 30, learning_rate: 5e-2, batch_size: 4, shuffle_seed: 11 },
    )
    .unwrap()
    .model;
    let data = PruneData {
        train: &train_set,
        eval: &eval_set,
        fine_tune: TrainConfig { epochs: 0, learning_rate: 1e-3, batch_size: 4, shuffle_seed: 9 },
        energy: EnergyConstants::default(),
    };
    let cfg = PruneConfig {
        ratio: 0.0,
        iterations: 1,
        fine_tune_epochs_per_iter: 0,
        prunable_layers: set(&[0]),
    };
    let stages = iterative_prune(&tuned, &cfg, &data).unwrap();
    let mut correct = 0usize;
    let mut total = 0usize;
    for (pixels, mask) in &eval_set.samples {
        let probs = tuned.forward(pixels).unwrap();
        let pred = cropchain_core::segmentation::predict_mask(&probs);
        for (a, b) in pred.data().iter().zip(mask.data()) {
            if a == b {
                correct += 1;
            }
            total += 1;
        }
    }
    let direct = correct as f64 / total as f64;
    assert_eq!(stages[0].record.accuracy, direct);
}
