//! FLOP accounting, parameter-size arithmetic, the energy estimate, and
//! latency measurement.

use cropchain_core::cost_model::{
    count_flops, estimate_energy, layer_flops, measure_latency, model_size_mb, profile_model,
    EnergyConstants,
};
use cropchain_core::nn::{
    reference_fcn, reference_prunable_layers, vgg16_fcn_descriptor, Layer, LayerKind, ModelGraph,
};
use cropchain_core::pruning::prune_step;
use cropchain_core::tensor::Tensor4;
use cropchain_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn conv(in_c: usize, out_c: usize, k: usize, stride: usize, padding: usize) -> LayerKind {
    LayerKind::Conv2d { in_channels: in_c, out_channels: out_c, kernel: (k, k), stride, padding }
}

/// Counts operations by walking real activation tensors from a forward
/// trace: per output (or input, for the transposed conv scatter) element,
/// charge the documented per-element costs. Shapes come from the executed
/// forward pass, not from the static shape calculator under test.
fn census_flops(model: &ModelGraph, input: &Tensor4) -> u64 {
    let trace = model.forward_trace(input).unwrap();
    let mut total: u64 = 0;
    let mut prev_shape = input.shape();
    for (layer, out) in model.layers.iter().zip(&trace.outputs) {
        let [_, out_c, out_h, out_w] = out.shape();
        let [_, in_c, in_h, in_w] = prev_shape;
        let out_elems = (out_c * out_h * out_w) as u64;
        total += match layer.kind {
            LayerKind::Conv2d { kernel: (kh, kw), .. } => {
                // Dense accumulation: each output element reads every
                // kernel tap of every input channel (taps over the padded
                // border included) at 2 ops, plus one bias add.
                let mut ops = 0u64;
                for _ in 0..out_c * out_h * out_w {
                    ops += 2 * (kh * kw * in_c) as u64 + 1;
                }
                ops
            }
            LayerKind::TransposedConv2d { kernel: (kh, kw), .. } => {
                // Scatter: each input element contributes one
                // multiply-accumulate per kernel tap per output channel.
                let mut ops = 0u64;
                for _ in 0..in_c * in_h * in_w {
                    ops += 2 * (kh * kw * out_c) as u64;
                }
                ops + out_elems // bias adds
            }
            LayerKind::ReLU | LayerKind::MaxPool2d { .. } | LayerKind::SkipAdd { .. } => out_elems,
            LayerKind::SoftmaxPerPixel => 5 * out_elems,
        };
        prev_shape = out.shape();
    }
    total
}

#[test]
fn conv_flop_formula_matches_the_worked_example() {
    // 3×3 kernel, 2 input channels, 4 output channels, 8×8 output:
    // multiply-accumulate part 2·3·3·2·8·8·4 = 9216, plus one bias add
    // per output element (layers always carry bias here) = 256.
    let total = layer_flops(&conv(2, 4, 3, 1, 1), (2, 8, 8), (4, 8, 8));
    let bias_adds = 4 * 8 * 8;
    assert_eq!(total - bias_adds, 9216);
    assert_eq!(total, 9472);
}

#[test]
fn elementary_layer_costs() {
    // 1×1 conv, 1→1 channels, on a single pixel: one multiply + one
    // accumulate = 2, plus the bias add.
    let total = layer_flops(&conv(1, 1, 1, 1, 0), (1, 1, 1), (1, 1, 1));
    assert_eq!(total - 1, 2);

    assert_eq!(layer_flops(&LayerKind::ReLU, (1, 8, 8), (1, 8, 8)), 64);
    assert_eq!(
        layer_flops(&LayerKind::MaxPool2d { window: 2, stride: 2 }, (4, 8, 8), (4, 4, 4)),
        64
    );
    assert_eq!(layer_flops(&LayerKind::SkipAdd { source: 0 }, (4, 8, 8), (4, 8, 8)), 256);
    assert_eq!(layer_flops(&LayerKind::SoftmaxPerPixel, (2, 8, 8), (2, 8, 8)), 5 * 2 * 64);
}

#[test]
fn static_count_matches_an_instrumented_forward_census() {
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    // The reference network exercises every layer kind at once.
    let mut reference = reference_fcn();
    reference.init_params(&mut rng);
    let input = Tensor4::from_vec(
        [1, 1, 32, 32],
        (0..1024).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();
    assert_eq!(count_flops(&reference).unwrap(), census_flops(&reference, &input));

    // Randomized small stacks: conv/pool/deconv in varying shapes.
    for trial in 0..10u64 {
        let mut shape_rng = ChaCha8Rng::seed_from_u64(601 + trial);
        let c1 = shape_rng.gen_range(1..5usize);
        let c2 = shape_rng.gen_range(1..6usize);
        let mut m = ModelGraph {
            layers: vec![
                Layer::new(conv(1, c1, 3, 1, 1)),
                Layer::new(LayerKind::ReLU),
                Layer::new(LayerKind::MaxPool2d { window: 2, stride: 2 }),
                Layer::new(conv(c1, c2, 1, 1, 0)),
                Layer::new(LayerKind::TransposedConv2d {
                    in_channels: c2,
                    out_channels: 2,
                    kernel: (2, 2),
                    stride: 2,
                    padding: 0,
                }),
                Layer::new(LayerKind::SoftmaxPerPixel),
            ],
            num_classes: 2,
            input_shape: (1, 8, 8),
        };
        m.init_params(&mut shape_rng);
        m.validate().unwrap();
        let x = Tensor4::from_vec(
            [1, 1, 8, 8],
            (0..64).map(|_| shape_rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        assert_eq!(count_flops(&m).unwrap(), census_flops(&m, &x), "trial {trial}");
    }
}

#[test]
fn reference_network_totals() {
    let model = reference_fcn();
    assert_eq!(count_flops(&model).unwrap(), 8_777_216);
    assert_eq!(model.param_count(), 230_338);
    let expect_mb = (230_338u64 * 4) as f64 / f64::from(1u32 << 20);
    assert_eq!(model_size_mb(&model), expect_mb);
}

#[test]
fn fully_pruned_reference_network_hits_the_compression_floor() {
    let mut base = reference_fcn();
    let mut rng = ChaCha8Rng::seed_from_u64(610);
    base.init_params(&mut rng);
    let prunable = reference_prunable_layers();
    let mut model = base.clone();
    for _ in 0..3 {
        model = prune_step(&model, 0.9, &prunable).unwrap();
    }
    // Every prunable stage is down to a single filter.
    for (idx, count) in model.filter_counts() {
        if prunable.contains(&idx) {
            assert_eq!(count, 1, "layer {idx}");
        }
    }
    let floor_flops = count_flops(&model).unwrap();
    let floor_params = model.param_count();
    assert_eq!(floor_flops, 44_244);
    assert_eq!(floor_params, 91);

    let flop_reduction = 1.0 - floor_flops as f64 / 8_777_216.0;
    let size_reduction = 1.0 - floor_params as f64 / 230_338.0;
    assert!(flop_reduction >= 0.99, "flop reduction {flop_reduction}");
    assert!(size_reduction >= 0.98, "size reduction {size_reduction}");
}

#[test]
fn size_is_four_bytes_per_parameter() {
    // 1×1 conv with 1023 inputs and 1024 outputs: 1024·1023 weights +
    // 1024 biases = 1,048,576 parameters → exactly 4 MB.
    let m = ModelGraph {
        layers: vec![Layer::new(conv(1023, 1024, 1, 1, 0))],
        num_classes: 1024,
        input_shape: (1023, 1, 1),
    };
    assert_eq!(m.param_count(), 1_048_576);
    assert_eq!(model_size_mb(&m), 4.0);

    let empty = ModelGraph {
        layers: vec![Layer::new(LayerKind::ReLU)],
        num_classes: 2,
        input_shape: (2, 4, 4),
    };
    assert_eq!(model_size_mb(&empty), 0.0);
}

#[test]
fn energy_spot_values() {
    let constants = EnergyConstants::default();
    assert_eq!(estimate_energy(0, 0.0, &constants), 0.0);
    // 1e9 FLOPs at 2.3 pJ each → 2.3 mJ; one rounding step separates the
    // product from the decimal literal, hence the tiny absolute window.
    assert!((estimate_energy(1_000_000_000, 0.0, &constants) - 2.3e-3).abs() < 1e-18);
    assert!((estimate_energy(0, 513.0, &constants) - 3.2832e-7).abs() < 1e-18);
}

#[test]
fn profiles_recompute_bit_identically() {
    let mut model = reference_fcn();
    let mut rng = ChaCha8Rng::seed_from_u64(611);
    model.init_params(&mut rng);
    let constants = EnergyConstants::default();
    let profile = profile_model(&model, &constants).unwrap();
    assert_eq!(
        profile.energy_j,
        estimate_energy(profile.flops, profile.size_mb, &constants)
    );
    assert_eq!(profile.latency_ms, None);

    let custom = EnergyConstants { joules_per_flop: 1e-11, joules_per_mb: 2e-9 };
    let p2 = profile_model(&model, &custom).unwrap();
    assert_eq!(p2.energy_j, estimate_energy(p2.flops, p2.size_mb, &custom));
    assert!(p2.energy_j > profile.energy_j);
}

#[test]
fn paper_scale_descriptor_brackets_published_magnitudes() {
    let vgg = vgg16_fcn_descriptor();
    let flops = count_flops(&vgg).unwrap();
    assert!(
        (100_000_000_000..=150_000_000_000).contains(&flops),
        "descriptor FLOPs {flops}"
    );
    let size = model_size_mb(&vgg);
    assert!((450.0..=550.0).contains(&size), "descriptor size {size} MB");
    assert!(!vgg.has_params(), "descriptor must stay shape-only");
}

#[test]
fn latency_requires_three_repetitions() {
    let mut model = reference_fcn();
    let mut rng = ChaCha8Rng::seed_from_u64(612);
    model.init_params(&mut rng);
    let input = Tensor4::zeros([1, 1, 32, 32]);
    assert!(matches!(
        measure_latency(&model, &input, 2),
        Err(Error::InvalidArgument(_))
    ));
    assert!(measure_latency(&model, &input, 3).unwrap() > 0.0);
}

#[test]
fn repeated_latency_measurements_are_stable() {
    let mut model = reference_fcn();
    let mut rng = ChaCha8Rng::seed_from_u64(613);
    model.init_params(&mut rng);
    let input = Tensor4::from_vec(
        [1, 1, 32, 32],
        (0..1024).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let a = measure_latency(&model, &input, 21).unwrap();
    let b = measure_latency(&model, &input, 21).unwrap();
    let spread = (a - b).abs() / a.max(b);
    assert!(spread <= 0.30, "medians {a:.4} ms vs {b:.4} ms (spread {spread:.3})");
}

#[test]
fn latency_tracks_flops_within_a_wide_band() {
    // Two conv stacks sized so the smaller has ~half the FLOPs; the
    // wall-clock ratio must fall in [0.35, 0.75].
    fn stack(mid: usize) -> ModelGraph {
        let mut m = ModelGraph {
            layers: vec![
                Layer::new(conv(1, mid, 3, 1, 1)),
                Layer::new(LayerKind::ReLU),
                Layer::new(conv(mid, 2, 1, 1, 0)),
                Layer::new(LayerKind::SoftmaxPerPixel),
            ],
            num_classes: 2,
            input_shape: (1, 64, 64),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(614 + mid as u64);
        m.init_params(&mut rng);
        m
    }
    let big = stack(64);
    let small = stack(32);
    let fb = count_flops(&big).unwrap() as f64;
    let fs = count_flops(&small).unwrap() as f64;
    let flop_ratio = fs / fb;
    assert!((0.45..=0.55).contains(&flop_ratio), "flop ratio {flop_ratio}");

    let mut rng = ChaCha8Rng::seed_from_u64(615);
    let input = Tensor4::from_vec(
        [1, 1, 64, 64],
        (0..4096).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let lb = measure_latency(&big, &input, 9).unwrap();
    let ls = measure_latency(&small, &input, 9).unwrap();
    let ratio = ls / lb;
    assert!(
        (0.35..=0.75).contains(&ratio),
        "latency ratio {ratio:.3} (small {ls:.3} ms, big {lb:.3} ms)"
    );
}
