//! Ready-made model builders.

use super::{Layer, LayerKind, ModelGraph};

fn conv(in_c: usize, out_c: usize, k: usize, stride: usize, padding: usize) -> Layer {
    Layer::with_zero_params(LayerKind::Conv2d {
        in_channels: in_c,
        out_channels: out_c,
        kernel: (k, k),
        stride,
        padding,
    })
}

fn deconv(in_c: usize, out_c: usize, k: usize, stride: usize, padding: usize) -> Layer {
    Layer::with_zero_params(LayerKind::TransposedConv2d {
        in_channels: in_c,
        out_channels: out_c,
        kernel: (k, k),
        stride,
        padding,
    })
}

fn relu() -> Layer {
    Layer::new(LayerKind::ReLU)
}

fn pool() -> Layer {
    Layer::new(LayerKind::MaxPool2d { window: 2, stride: 2 })
}

/// The desk-scale segmentation network used throughout the crate:
/// a four-stage convolutional encoder on 1×32×32 grayscale input, a
/// two-stage transposed-convolution decoder with one additive skip from the
/// third encoder stage, and a per-pixel softmax over 2 classes
/// (background / biomass).
///
/// Parameters are allocated and zeroed; call
/// [`ModelGraph::init_params`](super::ModelGraph::init_params) before
/// training.
///
/// Layer indices (stable — pruning configs refer to them):
///
/// | idx | layer                              | output    |
/// |-----|------------------------------------|-----------|
/// | 0   | conv 1→16, 3×3 s1 p1               | 16×32×32  |
/// | 1   | relu                               | 16×32×32  |
/// | 2   | maxpool 2×2 s2                     | 16×16×16  |
/// | 3   | conv 16→32, 3×3 s1 p1              | 32×16×16  |
/// | 4   | relu                               | 32×16×16  |
/// | 5   | maxpool 2×2 s2                     | 32×8×8    |
/// | 6   | conv 32→64, 3×3 s1 p1              | 64×8×8    |
/// | 7   | relu                               | 64×8×8    |
/// | 8   | maxpool 2×2 s2                     | 64×4×4    |
/// | 9   | conv 64→128, 3×3 s1 p1             | 128×4×4   |
/// | 10  | relu                               | 128×4×4   |
/// | 11  | maxpool 2×2 s2                     | 128×2×2   |
/// | 12  | deconv 128→64, 4×4 s4              | 64×8×8    |
/// | 13  | skip-add from layer 7              | 64×8×8    |
/// | 14  | relu                               | 64×8×8    |
/// | 15  | deconv 64→2, 4×4 s4                | 2×32×32   |
/// | 16  | per-pixel softmax                  | 2×32×32   |
pub fn reference_fcn() -> ModelGraph {
    let layers = vec![
        conv(1, 16, 3, 1, 1),
        relu(),
        pool(),
        conv(16, 32, 3, 1, 1),
        relu(),
        pool(),
        conv(32, 64, 3, 1, 1),
        relu(),
        pool(),
        conv(64, 128, 3, 1, 1),
        relu(),
        pool(),
        deconv(128, 64, 4, 4, 0),
        Layer::new(LayerKind::SkipAdd { source: 7 }),
        relu(),
        deconv(64, 2, 4, 4, 0),
        Layer::new(LayerKind::SoftmaxPerPixel),
    ];
    ModelGraph { layers, num_classes: 2, input_shape: (1, 32, 32) }
}

/// Layer indices of the filter-bearing layers in [`reference_fcn`] that are
/// safe to prune (everything except the class-logit head at index 15).
pub fn reference_prunable_layers() -> std::collections::BTreeSet<usize> {
    [0usize, 3, 6, 9, 12].into_iter().collect()
}

/// Shape-only descriptor of a VGG16-backbone FCN (32× upsampling head) on
/// 3×384×384 input — the scale of the full-size field segmentation model.
///
/// No parameters are allocated (~134M of them, ~512 MB at 4 bytes each);
/// the descriptor exists so the cost model can be sanity-checked against
/// realistic magnitudes: ~125 GFLOPs per frame and ~0.5 GB of weights.
pub fn vgg16_fcn_descriptor() -> ModelGraph {
    let mut layers = Vec::new();
    let push_conv = |layers: &mut Vec<Layer>, in_c: usize, out_c: usize, k: usize, p: usize| {
        layers.push(Layer::new(LayerKind::Conv2d {
            in_channels: in_c,
            out_channels: out_c,
            kernel: (k, k),
            stride: 1,
            padding: p,
        }));
        layers.push(relu());
    };
    // VGG16 backbone: 2-2-3-3-3 convs, pooling after each block.
    let blocks: [(usize, usize, usize); 5] =
        [(3, 64, 2), (64, 128, 2), (128, 256, 3), (256, 512, 3), (512, 512, 3)];
    for (in_c, out_c, convs) in blocks {
        push_conv(&mut layers, in_c, out_c, 3, 1);
        for _ in 1..convs {
            push_conv(&mut layers, out_c, out_c, 3, 1);
        }
        layers.push(pool());
    }
    // Convolutionalized classifier head.
    push_conv(&mut layers, 512, 4096, 7, 3); // fc6 as 7×7 conv
    push_conv(&mut layers, 4096, 4096, 1, 0); // fc7 as 1×1 conv
    layers.push(Layer::new(LayerKind::Conv2d {
        in_channels: 4096,
        out_channels: 2,
        kernel: (1, 1),
        stride: 1,
        padding: 0,
    }));
    // 32× learned upsampling back to input resolution.
    layers.push(Layer::new(LayerKind::TransposedConv2d {
        in_channels: 2,
        out_channels: 2,
        kernel: (64, 64),
        stride: 32,
        padding: 16,
    }));
    layers.push(Layer::new(LayerKind::SoftmaxPerPixel));
    ModelGraph { layers, num_classes: 2, input_shape: (3, 384, 384) }
}
