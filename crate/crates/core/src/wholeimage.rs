//! From patch classifier to whole-image classifier.
//!
//! A patch classifier `f` maps a `p x q` patch to `c` class probabilities.
//! Rewriting its dense head as convolutions gives a fully convolutional
//! `f` that slides over a larger image `M` and yields a `u x v x c`
//! heatmap. A small head `g` (max pooling, dense layers and a shortcut from
//! the per-class global maxima) turns that heatmap into three whole-image
//! classes.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::forward;
use crate::graph::NetworkGraph;
use crate::layer::{LayerKind, LayerSpec, Padding, INPUT_ID};
use crate::synth::he_normal;
use crate::tensor::Tensor;

/// Patch classes: background plus benign/malignant calcification and mass.
pub const PATCH_CLASSES: usize = 5;
/// Whole-image classes: normal, benign, malignant.
pub const WHOLE_CLASSES: usize = 3;

fn conversion(layer: &str, message: impl Into<String>) -> Error {
    Error::Conversion {
        layer: layer.to_string(),
        message: message.into(),
    }
}

/// A sequential image classifier ending in a 5-way softmax whose layers all
/// commute with sliding the input window.
#[derive(Clone, Debug)]
pub struct PatchClassifier {
    net: NetworkGraph,
}

impl PatchClassifier {
    pub fn new(net: NetworkGraph) -> Result<Self> {
        if net.input_shape().len() != 3 {
            return Err(conversion(INPUT_ID, "patch classifier input must be rows x cols x channels"));
        }
        if net.output_classes() != PATCH_CLASSES || !net.ends_in_softmax() {
            return Err(conversion(
                net.name(),
                format!("patch classifier must end in a {PATCH_CLASSES}-way softmax"),
            ));
        }
        let mut flattened = false;
        for (i, layer) in net.layers().iter().enumerate() {
            let prev = if i == 0 { INPUT_ID } else { net.layers()[i - 1].id.as_str() };
            if layer.inputs.len() != 1 || layer.inputs[0] != prev {
                return Err(conversion(&layer.id, "patch classifier must be a single chain"));
            }
            match &layer.kind {
                LayerKind::Conv2D { padding, .. } => {
                    if *padding == Padding::Same {
                        return Err(conversion(
                            &layer.id,
                            "same padding sees the patch border and breaks sliding equivalence",
                        ));
                    }
                }
                LayerKind::MaxPool2D { .. } | LayerKind::AvgPool2D { .. } | LayerKind::BatchNormFolded
                    if flattened =>
                {
                    return Err(conversion(&layer.id, "spatial layer after Flatten"));
                }
                LayerKind::Flatten => flattened = true,
                LayerKind::Add => return Err(conversion(&layer.id, "branching layers are not supported")),
                _ => {}
            }
        }
        Ok(Self { net })
    }

    pub fn net(&self) -> &NetworkGraph {
        &self.net
    }

    /// `(rows, cols)` of a patch.
    pub fn patch_size(&self) -> (usize, usize) {
        let s = self.net.input_shape();
        (s[0], s[1])
    }
}

/// Product of conv and pooling strides along rows and columns: how far the
/// patch window moves per heatmap cell.
pub fn effective_stride(net: &NetworkGraph) -> [usize; 2] {
    net.layers().iter().fold([1, 1], |[r, c], l| match &l.kind {
        LayerKind::Conv2D { stride, .. } => [r * stride, c * stride],
        LayerKind::MaxPool2D { stride, .. } | LayerKind::AvgPool2D { stride, .. } => {
            [r * stride[0], c * stride[1]]
        }
        _ => [r, c],
    })
}

/// Rewrites every `Flatten -> Dense` as a convolution whose kernel covers
/// the incoming feature map, and every later Dense as a 1x1 convolution.
/// Flatten layers disappear. A net without dense layers comes back as is.
pub fn dense_to_conv(patch: &PatchClassifier) -> Result<NetworkGraph> {
    let net = patch.net();
    let mut layers: Vec<LayerSpec> = Vec::with_capacity(net.layers().len());
    // ids of dropped Flatten layers, mapped to the layer they read
    let mut renamed: HashMap<String, String> = HashMap::new();
    let mut flatten_from: Option<Vec<usize>> = None;
    let mut converted_first = false;

    for (i, layer) in net.layers().iter().enumerate() {
        let inputs: Vec<String> = layer
            .inputs
            .iter()
            .map(|id| renamed.get(id).cloned().unwrap_or_else(|| id.clone()))
            .collect();
        match &layer.kind {
            LayerKind::Flatten => {
                flatten_from = Some(net.source_shape(net.sources(i)[0]).to_vec());
                renamed.insert(layer.id.clone(), inputs[0].clone());
            }
            LayerKind::Dense { units } => {
                let Some(map) = &flatten_from else {
                    return Err(conversion(&layer.id, "dense layer not preceded by Flatten"));
                };
                let w = layer.weights.as_ref().expect("validated");
                let n_in = w.shape()[0];
                let (kernel, cin) = if converted_first {
                    ([1, 1], n_in)
                } else {
                    ([map[0], map[1]], map[2])
                };
                converted_first = true;
                let weights = w.clone().reshape(&[kernel[0], kernel[1], cin, *units])?;
                layers.push(LayerSpec {
                    id: layer.id.clone(),
                    kind: LayerKind::Conv2D {
                        filters: *units,
                        kernel,
                        stride: 1,
                        padding: Padding::Valid,
                    },
                    weights: Some(weights),
                    bias: layer.bias.clone(),
                    inputs,
                });
            }
            _ => layers.push(LayerSpec {
                inputs,
                ..layer.clone()
            }),
        }
    }
    NetworkGraph::new(
        format!("{}-fconv", net.name()),
        net.input_shape().to_vec(),
        net.output_classes(),
        layers,
    )
}

/// Per-position class probabilities over a whole image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WholeImageHeatmap {
    /// `u x v x c`.
    pub values: Tensor,
    pub source_image_shape: (usize, usize),
    /// Patch offset between neighbouring cells, `[rows, cols]`.
    pub stride: [usize; 2],
}

impl WholeImageHeatmap {
    /// Class probabilities at cell `(i, j)`.
    pub fn cell(&self, i: usize, j: usize) -> &[f64] {
        let s = self.values.shape();
        let start = (i * s[1] + j) * s[2];
        &self.values.data()[start..start + s[2]]
    }

    /// One `u x v` plane per class as binary PGM files `<stem>_class<k>.pgm`,
    /// probabilities scaled to 0..255.
    pub fn write_pgm_planes(&self, stem: &Path) -> Result<Vec<std::path::PathBuf>> {
        let s = self.values.shape();
        let (u, v, c) = (s[0], s[1], s[2]);
        let mut paths = Vec::with_capacity(c);
        for k in 0..c {
            let name = format!(
                "{}_class{k}.pgm",
                stem.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
            );
            let path = stem.with_file_name(name);
            let mut bytes = format!("P5\n{v} {u}\n255\n").into_bytes();
            bytes.extend(
                self.values
                    .data()
                    .iter()
                    .skip(k)
                    .step_by(c)
                    .map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
            );
            std::fs::File::create(&path)
                .and_then(|mut f| f.write_all(&bytes))
                .map_err(|e| Error::io(&path, e))?;
            paths.push(path);
        }
        Ok(paths)
    }

    /// `row,col,class,probability` lines with a header.
    pub fn to_csv(&self) -> String {
        let s = self.values.shape();
        let mut out = String::from("row,col,class,probability\n");
        for i in 0..s[0] {
            for j in 0..s[1] {
                for (k, p) in self.cell(i, j).iter().enumerate() {
                    writeln!(out, "{i},{j},{k},{p}").expect("write to string");
                }
            }
        }
        out
    }
}

/// `fconv` rebuilt for a different input size.
fn resize_input(fconv: &NetworkGraph, shape: &[usize]) -> Result<NetworkGraph> {
    NetworkGraph::new(
        fconv.name(),
        shape.to_vec(),
        fconv.output_classes(),
        fconv.layers().to_vec(),
    )
}

/// Applies the fully convolutional classifier to `image`. The patch size
/// is `fconv`'s input shape; cell `(i, j)` holds `f` of the patch at offset
/// `(i * stride, j * stride)`, and only offsets whose patch fits inside the
/// image are kept.
pub fn heatmap(fconv: &NetworkGraph, image: &Tensor) -> Result<WholeImageHeatmap> {
    let patch = fconv.input_shape();
    let Some((r, s, ch)) = image.hwc() else {
        return Err(Error::shape(INPUT_ID, "whole image must be rows x cols x channels"));
    };
    if patch.len() != 3 || ch != patch[2] {
        return Err(Error::shape(
            INPUT_ID,
            format!("image {:?} does not match patch shape {:?}", image.shape(), patch),
        ));
    }
    if r < patch[0] || s < patch[1] {
        return Err(Error::shape(
            INPUT_ID,
            format!("image {r}x{s} is smaller than the {}x{} patch", patch[0], patch[1]),
        ));
    }
    let stride = effective_stride(fconv);
    let u = (r - patch[0]) / stride[0] + 1;
    let v = (s - patch[1]) / stride[1] + 1;
    let out = forward(&resize_input(fconv, image.shape())?, image)?;
    let (ou, ov, c) = out
        .hwc()
        .ok_or_else(|| Error::shape(INPUT_ID, "fully convolutional output must be rank 3"))?;
    debug_assert!(ou >= u && ov >= v);
    let mut values = Vec::with_capacity(u * v * c);
    for i in 0..u {
        values.extend_from_slice(&out.data()[i * ov * c..(i * ov + v) * c]);
    }
    Ok(WholeImageHeatmap {
        values: Tensor::new(vec![u, v, c], values)?,
        source_image_shape: (r, s),
        stride,
    })
}

/// Sizes of the whole-image head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Max-pooling window (and stride) applied to the heatmap; clipped to
    /// the heatmap extent.
    pub pool_window: usize,
    pub hidden_widths: Vec<usize>,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            pool_window: 2,
            hidden_widths: vec![64],
        }
    }
}

/// Builds the head `g` on a `u x v x c` heatmap:
/// `softmax(dense(flatten(maxpool(H))) + W_s * globalmax(H) + b_s)`.
/// Weights are He-initialised, biases zero.
pub fn build_head<R: Rng + ?Sized>(rng: &mut R, heatmap_shape: &[usize], cfg: &HeadConfig) -> Result<NetworkGraph> {
    let &[u, v, c] = heatmap_shape else {
        return Err(Error::shape("head", "heatmap must be rank 3"));
    };
    if cfg.pool_window == 0 || cfg.hidden_widths.contains(&0) {
        return Err(Error::Input("head sizes must be positive".into()));
    }
    let window = [cfg.pool_window.min(u), cfg.pool_window.min(v)];
    let mut layers = vec![LayerSpec::new(
        "pool",
        LayerKind::MaxPool2D { window, stride: window },
        vec![INPUT_ID.into()],
    )];
    layers.push(LayerSpec::new("flatten", LayerKind::Flatten, vec!["pool".into()]));
    let mut width = (u / window[0]) * (v / window[1]) * c;
    let mut prev = "flatten".to_string();
    for (k, &units) in cfg.hidden_widths.iter().enumerate() {
        let id = format!("hidden{k}");
        layers.push(
            LayerSpec::new(&id, LayerKind::Dense { units }, vec![prev])
                .with_weights(he_normal(rng, &[width, units], width))
                .with_bias(Tensor::zeros(&[units])),
        );
        let relu = format!("hidden{k}_relu");
        layers.push(LayerSpec::new(&relu, LayerKind::ReLU, vec![id]));
        prev = relu;
        width = units;
    }
    layers.push(
        LayerSpec::new("main_out", LayerKind::Dense { units: WHOLE_CLASSES }, vec![prev])
            .with_weights(he_normal(rng, &[width, WHOLE_CLASSES], width))
            .with_bias(Tensor::zeros(&[WHOLE_CLASSES])),
    );
    layers.push(LayerSpec::new(
        "global_max",
        LayerKind::MaxPool2D {
            window: [u, v],
            stride: [u, v],
        },
        vec![INPUT_ID.into()],
    ));
    layers.push(LayerSpec::new("global_flatten", LayerKind::Flatten, vec!["global_max".into()]));
    layers.push(
        LayerSpec::new("shortcut", LayerKind::Dense { units: WHOLE_CLASSES }, vec!["global_flatten".into()])
            .with_weights(he_normal(rng, &[c, WHOLE_CLASSES], c))
            .with_bias(Tensor::zeros(&[WHOLE_CLASSES])),
    );
    layers.push(LayerSpec::new("merge", LayerKind::Add, vec!["main_out".into(), "shortcut".into()]));
    layers.push(LayerSpec::new("softmax", LayerKind::Softmax, vec!["merge".into()]));
    NetworkGraph::new("whole-image-head", heatmap_shape.to_vec(), WHOLE_CLASSES, layers)
}

/// `h = g o f`: fully convolutional patch classifier plus head.
#[derive(Clone, Debug)]
pub struct WholeImageClassifier {
    pub fconv: NetworkGraph,
    pub head: NetworkGraph,
}

impl WholeImageClassifier {
    /// Converts `patch` and attaches a fresh head sized for images shaped
    /// `image_shape`.
    pub fn build<R: Rng + ?Sized>(
        rng: &mut R,
        patch: &PatchClassifier,
        image_shape: &[usize],
        cfg: &HeadConfig,
    ) -> Result<Self> {
        let fconv = dense_to_conv(patch)?;
        let probe = heatmap(&fconv, &Tensor::zeros(image_shape))?;
        let head = build_head(rng, probe.values.shape(), cfg)?;
        Ok(Self { fconv, head })
    }

    pub fn heatmap(&self, image: &Tensor) -> Result<WholeImageHeatmap> {
        heatmap(&self.fconv, image)
    }

    pub fn classify(&self, image: &Tensor) -> Result<Tensor> {
        classify_whole(&self.fconv, &self.head, image)
    }
}

/// Largest image extent `<= requested` of the form `patch + k * stride`.
/// On such images the fully convolutional output needs no cropping.
pub fn aligned_image_size(fconv: &NetworkGraph, requested: (usize, usize)) -> Result<(usize, usize)> {
    let (p, q) = (fconv.input_shape()[0], fconv.input_shape()[1]);
    if requested.0 < p || requested.1 < q {
        return Err(Error::shape(
            INPUT_ID,
            format!("image {}x{} is smaller than the {p}x{q} patch", requested.0, requested.1),
        ));
    }
    let t = effective_stride(fconv);
    Ok((
        p + (requested.0 - p) / t[0] * t[0],
        q + (requested.1 - q) / t[1] * t[1],
    ))
}

impl WholeImageClassifier {
    /// One graph computing `h` on images shaped `image_shape`, which must
    /// be aligned (see [`aligned_image_size`]). Head layers get a `head_`
    /// prefix.
    pub fn compose(&self, image_shape: &[usize]) -> Result<NetworkGraph> {
        let aligned = aligned_image_size(&self.fconv, (image_shape[0], image_shape[1]))?;
        if aligned != (image_shape[0], image_shape[1]) {
            return Err(Error::shape(
                INPUT_ID,
                format!("image {:?} is not aligned to the patch stride; try {}x{}", image_shape, aligned.0, aligned.1),
            ));
        }
        let mut layers = self.fconv.layers().to_vec();
        let heat_id = layers.last().expect("non-empty").id.clone();
        for l in self.head.layers() {
            let mut l = l.clone();
            l.id = format!("head_{}", l.id);
            for input in &mut l.inputs {
                *input = if input == INPUT_ID {
                    heat_id.clone()
                } else {
                    format!("head_{input}")
                };
            }
            layers.push(l);
        }
        NetworkGraph::new("whole-image-classifier", image_shape.to_vec(), WHOLE_CLASSES, layers)
    }
}

/// Three whole-image class probabilities for `image`.
pub fn classify_whole(fconv: &NetworkGraph, head: &NetworkGraph, image: &Tensor) -> Result<Tensor> {
    let h = heatmap(fconv, image)?;
    forward(head, &h.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::class_probabilities;
    use crate::graph::GraphBuilder;
    use crate::synth::uniform_tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_patch_net(rng: &mut ChaCha8Rng, p: usize) -> PatchClassifier {
        let mut b = GraphBuilder::new("patch", &[p, p, 1]);
        b.push(LayerKind::conv(3, 3, 1, Padding::Valid), Some(he_normal(rng, &[3, 3, 1, 3], 9)), None);
        b.push(LayerKind::ReLU, None, None);
        b.push(LayerKind::max_pool(2), None, None);
        b.push(LayerKind::Flatten, None, None);
        let n = ((p - 2) / 2).pow(2) * 3;
        b.push(LayerKind::Dense { units: 6 }, Some(he_normal(rng, &[n, 6], n)), Some(Tensor::zeros(&[6])));
        b.push(LayerKind::ReLU, None, None);
        b.push(LayerKind::Dense { units: 5 }, Some(he_normal(rng, &[6, 5], 6)), Some(Tensor::zeros(&[5])));
        b.push(LayerKind::Softmax, None, None);
        PatchClassifier::new(b.build(5).unwrap()).unwrap()
    }

    #[test]
    fn converted_net_agrees_on_patches() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let patch = small_patch_net(&mut rng, 8);
        let fconv = dense_to_conv(&patch).unwrap();
        assert!(fconv.layers().iter().all(|l| !matches!(l.kind, LayerKind::Dense { .. } | LayerKind::Flatten)));
        match &fconv.layers()[3].kind {
            LayerKind::Conv2D { kernel, .. } => assert_eq!(*kernel, [3, 3]),
            other => panic!("{other:?}"),
        }
        for _ in 0..20 {
            let x = uniform_tensor(&mut rng, &[8, 8, 1], -1.0, 1.0);
            let a = class_probabilities(patch.net(), &x).unwrap();
            let b = forward(&fconv, &x).unwrap();
            assert_eq!(b.shape(), &[1, 1, 5]);
            for (p, q) in a.data().iter().zip(b.data()) {
                assert!((p - q).abs() <= 1e-6 * p.abs().max(1e-12));
            }
        }
    }

    #[test]
    fn single_patch_image_gives_one_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let patch = small_patch_net(&mut rng, 6);
        let fconv = dense_to_conv(&patch).unwrap();
        let x = uniform_tensor(&mut rng, &[6, 6, 1], 0.0, 1.0);
        let h = heatmap(&fconv, &x).unwrap();
        assert_eq!(h.values.shape(), &[1, 1, 5]);
        let f = class_probabilities(patch.net(), &x).unwrap();
        for (a, b) in h.cell(0, 0).iter().zip(f.data()) {
            assert!((a - b).abs() <= 1e-6 * b);
        }
    }

    #[test]
    fn shifted_patch_fills_second_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let patch = small_patch_net(&mut rng, 8);
        let fconv = dense_to_conv(&patch).unwrap();
        assert_eq!(effective_stride(&fconv), [2, 2]);
        let img = uniform_tensor(&mut rng, &[10, 8, 1], 0.0, 1.0);
        let h = heatmap(&fconv, &img).unwrap();
        assert_eq!(h.values.shape(), &[2, 1, 5]);
        for (i, top) in [0usize, 2].into_iter().enumerate() {
            let crop = Tensor::new(vec![8, 8, 1], img.data()[top * 8..(top + 8) * 8].to_vec()).unwrap();
            let f = class_probabilities(patch.net(), &crop).unwrap();
            for (a, b) in h.cell(i, 0).iter().zip(f.data()) {
                assert!((a - b).abs() <= 1e-6 * b);
            }
            assert!((h.cell(i, 0).iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn conversion_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut b = GraphBuilder::new("bad", &[4, 4, 1]);
        b.push(LayerKind::conv(2, 3, 1, Padding::Same), Some(he_normal(&mut rng, &[3, 3, 1, 2], 9)), None);
        b.push(LayerKind::Flatten, None, None);
        b.push(LayerKind::Dense { units: 5 }, Some(Tensor::zeros(&[32, 5])), None);
        b.push(LayerKind::Softmax, None, None);
        assert!(matches!(PatchClassifier::new(b.build(5).unwrap()), Err(Error::Conversion { .. })));

        let mut b = GraphBuilder::new("three", &[4, 4, 1]);
        b.push(LayerKind::Flatten, None, None);
        b.push(LayerKind::Dense { units: 3 }, Some(Tensor::zeros(&[16, 3])), None);
        b.push(LayerKind::Softmax, None, None);
        assert!(matches!(PatchClassifier::new(b.build(3).unwrap()), Err(Error::Conversion { .. })));
    }

    #[test]
    fn all_conv_net_is_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut b = GraphBuilder::new("allconv", &[5, 5, 1]);
        b.push(LayerKind::conv(5, 5, 1, Padding::Valid), Some(he_normal(&mut rng, &[5, 5, 1, 5], 25)), None);
        b.push(LayerKind::Softmax, None, None);
        let net = b.build(5).unwrap();
        let fconv = dense_to_conv(&PatchClassifier::new(net.clone()).unwrap()).unwrap();
        assert_eq!(fconv.layers(), net.layers());
    }

    #[test]
    fn image_smaller_than_patch_is_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let fconv = dense_to_conv(&small_patch_net(&mut rng, 8)).unwrap();
        assert!(matches!(heatmap(&fconv, &Tensor::zeros(&[7, 9, 1])), Err(Error::Shape { .. })));
    }

    #[test]
    fn zeroed_head_reads_only_global_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let patch = small_patch_net(&mut rng, 6);
        let mut whole = WholeImageClassifier::build(&mut rng, &patch, &[12, 12, 1], &HeadConfig::default()).unwrap();
        let ws = Tensor::from_fn(&[5, 3], |i| (i as f64 * 0.37).sin());
        let params = whole
            .head
            .layers()
            .iter()
            .map(|l| match l.id.as_str() {
                "shortcut" => (Some(ws.clone()), l.bias.clone()),
                _ => (l.weights.as_ref().map(|w| Tensor::zeros(w.shape())), l.bias.clone()),
            })
            .collect();
        whole.head = whole.head.with_params(params).unwrap();
        let img = uniform_tensor(&mut rng, &[12, 12, 1], 0.0, 1.0);
        let h = whole.heatmap(&img).unwrap();
        let c = 5;
        let gmax: Vec<f64> = (0..c)
            .map(|k| h.values.data().iter().skip(k).step_by(c).cloned().fold(f64::MIN, f64::max))
            .collect();
        let z: Vec<f64> = (0..3).map(|j| (0..c).map(|k| gmax[k] * ws[k * 3 + j]).sum()).collect();
        let expect = crate::forward::softmax(&Tensor::from_vec(z)).unwrap();
        let got = whole.classify(&img).unwrap();
        for (a, b) in got.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((got.sum() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn composed_graph_matches_two_stage() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let patch = small_patch_net(&mut rng, 8);
        let fconv = dense_to_conv(&patch).unwrap();
        assert_eq!(aligned_image_size(&fconv, (17, 16)).unwrap(), (16, 16));
        let whole = WholeImageClassifier::build(&mut rng, &patch, &[16, 16, 1], &HeadConfig::default()).unwrap();
        let net = whole.compose(&[16, 16, 1]).unwrap();
        assert!(whole.compose(&[17, 16, 1]).is_err());
        for _ in 0..5 {
            let img = uniform_tensor(&mut rng, &[16, 16, 1], 0.0, 1.0);
            let a = whole.classify(&img).unwrap();
            let b = forward(&net, &img).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_and_pgm_export() {
        let h = WholeImageHeatmap {
            values: Tensor::new(vec![1, 2, 2], vec![0.25, 0.75, 1.0, 0.0]).unwrap(),
            source_image_shape: (8, 9),
            stride: [1, 1],
        };
        assert_eq!(h.to_csv(), "row,col,class,probability\n0,0,0,0.25\n0,0,1,0.75\n0,1,0,1\n0,1,1,0\n");
        let dir = tempfile::tempdir().unwrap();
        let paths = h.write_pgm_planes(&dir.path().join("heat")).unwrap();
        let bytes = std::fs::read(&paths[1]).unwrap();
        assert_eq!(bytes, b"P5\n2 1\n255\n\xbf\x00");
    }
}
