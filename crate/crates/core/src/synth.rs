//! Seeded generators for random networks and synthetic datasets used by
//! the property, oracle and evaluation suites.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::graph::{GraphBuilder, NetworkGraph};
use crate::layer::{LayerKind, Padding, INPUT_ID};
use crate::resnet::{build_resnet_block, BlockSpec};
use crate::tensor::Tensor;

/// Shape of a random ReLU network.
#[derive(Clone, Copy, Debug)]
pub struct RandomNetConfig {
    /// Upper bound on the number of Dense/Conv layers.
    pub max_depth: usize,
    pub max_width: usize,
    pub with_bias: bool,
    /// Image input with conv/max-pool layers before a dense head, instead
    /// of a pure MLP.
    pub convolutional: bool,
    pub classes: usize,
}

impl Default for RandomNetConfig {
    fn default() -> Self {
        Self {
            max_depth: 4,
            max_width: 16,
            with_bias: false,
            convolutional: false,
            classes: 3,
        }
    }
}

pub fn he_normal<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}

fn small_bias<R: Rng + ?Sized>(rng: &mut R, n: usize, enabled: bool) -> Option<Tensor> {
    enabled.then(|| Tensor::from_fn(&[n], |_| rng.random_range(-0.1..0.1)))
}

/// A random softmax-terminated ReLU network.
pub fn random_relu_net<R: Rng + ?Sized>(rng: &mut R, cfg: &RandomNetConfig) -> NetworkGraph {
    let depth = rng.random_range(1..=cfg.max_depth.max(1));
    let width = cfg.max_width.max(2);
    if cfg.convolutional {
        let h = rng.random_range(5..=8);
        let w = rng.random_range(5..=8);
        let c = rng.random_range(1..=3);
        let mut b = GraphBuilder::new("random-conv", &[h, w, c]);
        let mut shape = [h, w, c];
        for _ in 1..depth {
            let k = rng.random_range(1..=3).min(shape[0]).min(shape[1]);
            let stride = if shape[0] >= 4 && shape[1] >= 4 {
                rng.random_range(1..=2)
            } else {
                1
            };
            let padding = if rng.random_bool(0.5) {
                Padding::Valid
            } else {
                Padding::Same
            };
            let filters = rng.random_range(1..=width.min(8));
            let weights = he_normal(rng, &[k, k, shape[2], filters], k * k * shape[2]);
            let bias = small_bias(rng, filters, cfg.with_bias);
            b.push(LayerKind::conv(filters, k, stride, padding), Some(weights), bias);
            b.push(LayerKind::ReLU, None, None);
            shape = match padding {
                Padding::Valid => [(shape[0] - k) / stride + 1, (shape[1] - k) / stride + 1, filters],
                Padding::Same => [shape[0].div_ceil(stride), shape[1].div_ceil(stride), filters],
            };
            if shape[0] >= 4 && shape[1] >= 4 && rng.random_bool(0.3) {
                b.push(LayerKind::max_pool(2), None, None);
                shape = [shape[0] / 2, shape[1] / 2, filters];
            }
        }
        b.push(LayerKind::Flatten, None, None);
        let n: usize = shape.iter().product();
        let weights = he_normal(rng, &[n, cfg.classes], n);
        let bias = small_bias(rng, cfg.classes, cfg.with_bias);
        b.push(LayerKind::Dense { units: cfg.classes }, Some(weights), bias);
        b.push(LayerKind::Softmax, None, None);
        b.build(cfg.classes).expect("generator emits valid graphs")
    } else {
        let mut n = rng.random_range(2..=width);
        let mut b = GraphBuilder::new("random-mlp", &[n]);
        for _ in 1..depth {
            let units = rng.random_range(2..=width);
            let weights = he_normal(rng, &[n, units], n);
            let bias = small_bias(rng, units, cfg.with_bias);
            b.push(LayerKind::Dense { units }, Some(weights), bias);
            b.push(LayerKind::ReLU, None, None);
            n = units;
        }
        let weights = he_normal(rng, &[n, cfg.classes], n);
        let bias = small_bias(rng, cfg.classes, cfg.with_bias);
        b.push(LayerKind::Dense { units: cfg.classes }, Some(weights), bias);
        b.push(LayerKind::Softmax, None, None);
        b.build(cfg.classes).expect("generator emits valid graphs")
    }
}

pub fn uniform_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], low: f64, high: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(low..high))
}

/// Two Gaussian clouds on either side of a random line through the origin,
/// separated by a margin.
pub fn separable_2d<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<(Tensor, usize)> {
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let normal = [angle.cos(), angle.sin()];
    let noise = Normal::new(0.0, 1.0).expect("valid");
    (0..n)
        .map(|i| {
            let label = i % 2;
            let side = if label == 0 { 1.0 } else { -1.0 };
            let offset = side * (0.5 + rng.random_range(0.0..2.0));
            let along = noise.sample(rng) * 2.0;
            let x = [
                normal[0] * offset - normal[1] * along,
                normal[1] * offset + normal[0] * along,
            ];
            (Tensor::from_vec(x.to_vec()), label)
        })
        .collect()
}

/// `size x size x 1` images of low-amplitude noise around zero with one
/// disc of radius ~2.5 at a random position: `+1` (label 0, bright blob)
/// or `-1` (label 1, dark blob). Zero is the neutral value.
pub fn blob_images<R: Rng + ?Sized>(rng: &mut R, n: usize, size: usize) -> Vec<(Tensor, usize)> {
    (0..n)
        .map(|i| {
            let label = i % 2;
            let amp = if label == 0 { 1.0 } else { -1.0 };
            let radius = 2.5;
            let cy = rng.random_range(radius..size as f64 - radius);
            let cx = rng.random_range(radius..size as f64 - radius);
            let mut img = Tensor::zeros(&[size, size, 1]);
            for r in 0..size {
                for c in 0..size {
                    let (dy, dx) = (r as f64 + 0.5 - cy, c as f64 + 0.5 - cx);
                    let noise = rng.random_range(-0.1..0.1);
                    img[r * size + c] = if dy * dy + dx * dx <= radius * radius {
                        amp + noise
                    } else {
                        noise
                    };
                }
            }
            (img, label)
        })
        .collect()
}

/// Small conv classifier for `blob_images`.
pub fn blob_classifier<R: Rng + ?Sized>(rng: &mut R, size: usize) -> NetworkGraph {
    let mut b = GraphBuilder::new("blob-classifier", &[size, size, 1]);
    b.push(
        LayerKind::conv(4, 3, 1, Padding::Same),
        Some(he_normal(rng, &[3, 3, 1, 4], 9)),
        Some(Tensor::zeros(&[4])),
    );
    b.push(LayerKind::ReLU, None, None);
    b.push(LayerKind::max_pool(2), None, None);
    b.push(
        LayerKind::conv(4, 3, 1, Padding::Same),
        Some(he_normal(rng, &[3, 3, 4, 4], 36)),
        Some(Tensor::zeros(&[4])),
    );
    b.push(LayerKind::ReLU, None, None);
    b.push(LayerKind::max_pool(2), None, None);
    b.push(LayerKind::Flatten, None, None);
    let n = (size / 4) * (size / 4) * 4;
    b.push(
        LayerKind::Dense { units: 2 },
        Some(he_normal(rng, &[n, 2], n).scale(0.5)),
        Some(Tensor::zeros(&[2])),
    );
    b.push(LayerKind::Softmax, None, None);
    b.build(2).expect("valid blob classifier")
}

/// Patch lesion types, indexed like the five patch classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lesion {
    Background = 0,
    BenignCalcification = 1,
    MalignantCalcification = 2,
    BenignMass = 3,
    MalignantMass = 4,
}

impl Lesion {
    pub const ALL: [Lesion; 5] = [
        Lesion::Background,
        Lesion::BenignCalcification,
        Lesion::MalignantCalcification,
        Lesion::BenignMass,
        Lesion::MalignantMass,
    ];

    /// (side length, amplitude) of the square drawn for this lesion.
    fn footprint(self) -> Option<(usize, f64)> {
        match self {
            Lesion::Background => None,
            Lesion::BenignCalcification => Some((1, 0.5)),
            Lesion::MalignantCalcification => Some((1, 1.0)),
            Lesion::BenignMass => Some((4, 0.5)),
            Lesion::MalignantMass => Some((4, 1.0)),
        }
    }
}

fn noise_image<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(&[rows, cols, 1], |_| rng.random_range(0.0..0.1))
}

fn stamp(img: &mut Tensor, top: usize, left: usize, side: usize, amp: f64) {
    let cols = img.shape()[1];
    for r in top..top + side {
        for c in left..left + side {
            img[r * cols + c] += amp;
        }
    }
}

/// `p x p` patches labelled with the five patch classes in rotation.
pub fn lesion_patches<R: Rng + ?Sized>(rng: &mut R, n: usize, p: usize) -> Vec<(Tensor, usize)> {
    (0..n)
        .map(|i| {
            let lesion = Lesion::ALL[i % 5];
            let mut img = noise_image(rng, p, p);
            if let Some((side, amp)) = lesion.footprint() {
                let top = rng.random_range(0..=p - side);
                let left = rng.random_range(0..=p - side);
                stamp(&mut img, top, left, side, amp);
            }
            (img, lesion as usize)
        })
        .collect()
}

/// Whole `size x size` images with three labels: 0 normal (noise only),
/// 1 benign (a dim mass), 2 malignant (a bright mass).
pub fn whole_images<R: Rng + ?Sized>(rng: &mut R, n: usize, size: usize) -> Vec<(Tensor, usize)> {
    (0..n)
        .map(|i| {
            let label = i % 3;
            let mut img = noise_image(rng, size, size);
            let lesion = match label {
                0 => None,
                1 => Lesion::BenignMass.footprint(),
                _ => Lesion::MalignantMass.footprint(),
            };
            if let Some((side, amp)) = lesion {
                let top = rng.random_range(0..=size - side);
                let left = rng.random_range(0..=size - side);
                stamp(&mut img, top, left, side, amp);
            }
            (img, label)
        })
        .collect()
}

/// Five-class patch classifier for `lesion_patches`: two valid 3x3 convs
/// around a 2x2 max pool, then a dense softmax head. Needs `p >= 8`.
pub fn lesion_patch_classifier<R: Rng + ?Sized>(rng: &mut R, p: usize) -> NetworkGraph {
    assert!(p >= 8, "patch side {p} too small");
    let mut b = GraphBuilder::new("lesion-patch-classifier", &[p, p, 1]);
    b.push(
        LayerKind::conv(8, 3, 1, Padding::Valid),
        Some(he_normal(rng, &[3, 3, 1, 8], 9)),
        Some(Tensor::zeros(&[8])),
    );
    b.push(LayerKind::ReLU, None, None);
    b.push(LayerKind::max_pool(2), None, None);
    b.push(
        LayerKind::conv(8, 3, 1, Padding::Valid),
        Some(he_normal(rng, &[3, 3, 8, 8], 72)),
        Some(Tensor::zeros(&[8])),
    );
    b.push(LayerKind::ReLU, None, None);
    b.push(LayerKind::Flatten, None, None);
    let side = (p - 2) / 2 - 2;
    let n = side * side * 8;
    b.push(
        LayerKind::Dense { units: 5 },
        Some(he_normal(rng, &[n, 5], n)),
        Some(Tensor::zeros(&[5])),
    );
    b.push(LayerKind::Softmax, None, None);
    b.build(5).expect("valid patch classifier")
}

/// Random five-class patch classifier of valid convolutions, ReLUs and
/// max pools with strides 1 or 2, ending in a dense (or, one time in four,
/// all-convolutional) softmax head. Patches are 6 to 12 pixels a side with
/// one or two channels.
pub fn random_patch_net<R: Rng + ?Sized>(rng: &mut R) -> NetworkGraph {
    let (p, q, c) = (rng.random_range(6..=12), rng.random_range(6..=12), rng.random_range(1..=2));
    let mut b = GraphBuilder::new("random-patch", &[p, q, c]);
    let mut shape = [p, q, c];
    for _ in 0..rng.random_range(1..=3) {
        let k = rng.random_range(1..=3).min(shape[0]).min(shape[1]);
        let stride = if shape[0] >= 5 && shape[1] >= 5 { rng.random_range(1..=2) } else { 1 };
        let filters = rng.random_range(1..=6);
        let weights = he_normal(rng, &[k, k, shape[2], filters], k * k * shape[2]);
        let bias = small_bias(rng, filters, true);
        b.push(LayerKind::conv(filters, k, stride, Padding::Valid), Some(weights), bias);
        b.push(LayerKind::ReLU, None, None);
        shape = [(shape[0] - k) / stride + 1, (shape[1] - k) / stride + 1, filters];
        if shape[0] >= 4 && shape[1] >= 4 && rng.random_bool(0.4) {
            b.push(LayerKind::max_pool(2), None, None);
            shape = [shape[0] / 2, shape[1] / 2, filters];
        }
    }
    if rng.random_bool(0.25) {
        let weights = he_normal(rng, &[shape[0], shape[1], shape[2], 5], shape.iter().product());
        b.push(
            LayerKind::Conv2D {
                filters: 5,
                kernel: [shape[0], shape[1]],
                stride: 1,
                padding: Padding::Valid,
            },
            Some(weights),
            small_bias(rng, 5, true),
        );
    } else {
        b.push(LayerKind::Flatten, None, None);
        let mut n: usize = shape.iter().product();
        if rng.random_bool(0.5) {
            let units = rng.random_range(2..=8);
            b.push(LayerKind::Dense { units }, Some(he_normal(rng, &[n, units], n)), small_bias(rng, units, true));
            b.push(LayerKind::ReLU, None, None);
            n = units;
        }
        b.push(LayerKind::Dense { units: 5 }, Some(he_normal(rng, &[n, 5], n)), small_bias(rng, 5, true));
    }
    b.push(LayerKind::Softmax, None, None);
    b.build(5).expect("generator emits valid graphs")
}

/// A small residual classifier: one `[L-M-N] x K` block on a single-channel
/// image, then `pool x pool` max pooling and a dense softmax head.
pub fn toy_resnet<R: Rng + ?Sized>(
    rng: &mut R,
    image: (usize, usize),
    block: BlockSpec,
    pool: usize,
    classes: usize,
) -> Result<NetworkGraph> {
    let mut b = GraphBuilder::new("toy-resnet", &[image.0, image.1, 1]);
    for layer in build_resnet_block(&block, 1, INPUT_ID, "block_", rng)? {
        b.push_layer(layer);
    }
    let stride = if block.reduce_entry { 2 } else { 1 };
    let (h, w) = (image.0.div_ceil(stride), image.1.div_ceil(stride));
    b.push(LayerKind::max_pool(pool), None, None);
    b.push(LayerKind::Flatten, None, None);
    let n = (h / pool) * (w / pool) * block.depths.2;
    b.push(
        LayerKind::Dense { units: classes },
        Some(he_normal(rng, &[n, classes], n)),
        Some(Tensor::zeros(&[classes])),
    );
    b.push(LayerKind::Softmax, None, None);
    b.build(classes)
}
