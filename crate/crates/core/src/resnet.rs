//! Bottleneck residual blocks, `[L-M-N] x K`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{LayerKind, LayerSpec, Padding};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    /// Filter counts `(L, M, N)` of the 1x1, 3x3 and 1x1 convolutions.
    pub depths: (usize, usize, usize),
    /// Number of units `K`.
    pub repeats: usize,
    /// Whether the first unit's first convolution uses stride 2.
    pub reduce_entry: bool,
}

impl BlockSpec {
    pub fn new(depths: (usize, usize, usize), repeats: usize, reduce_entry: bool) -> Result<Self> {
        let (l, m, n) = depths;
        if l == 0 || m == 0 || n == 0 || repeats == 0 {
            return Err(Error::Input(format!(
                "block depths and repeats must be positive, got {depths:?} x {repeats}"
            )));
        }
        Ok(Self {
            depths,
            repeats,
            reduce_entry,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShortcutKind {
    Identity,
    Projection,
}

/// Expands `spec` into layers reading from `input_id`. Layer ids are
/// prefixed with `prefix`; the last layer of the returned list is the
/// block output. Convolutions get He-normal weights and zero bias; folded
/// batch norms start as the identity.
pub fn build_resnet_block<R: Rng + ?Sized>(
    spec: &BlockSpec,
    in_channels: usize,
    input_id: &str,
    prefix: &str,
    rng: &mut R,
) -> Result<Vec<LayerSpec>> {
    if in_channels == 0 {
        return Err(Error::Input("in_channels must be at least 1".into()));
    }
    let (l, m, n) = spec.depths;
    let mut layers = Vec::new();
    let mut unit_input = input_id.to_string();
    let mut channels = in_channels;
    for unit in 0..spec.repeats {
        let stride = if unit == 0 && spec.reduce_entry { 2 } else { 1 };
        let p = format!("{prefix}u{unit}_");
        let mut prev = unit_input.clone();
        let mut push = |layers: &mut Vec<LayerSpec>, name: &str, layer: LayerSpec| {
            let id = format!("{p}{name}");
            let mut layer = layer;
            layer.id = id.clone();
            layer.inputs = vec![prev.clone()];
            layers.push(layer);
            prev = id;
        };
        push(&mut layers, "conv1", conv(channels, l, 1, stride, rng));
        push(&mut layers, "bn1", batch_norm(l));
        push(&mut layers, "relu1", LayerSpec::new("", LayerKind::ReLU, vec![]));
        push(&mut layers, "conv2", conv(l, m, 3, 1, rng));
        push(&mut layers, "bn2", batch_norm(m));
        push(&mut layers, "relu2", LayerSpec::new("", LayerKind::ReLU, vec![]));
        push(&mut layers, "conv3", conv(m, n, 1, 1, rng));
        push(&mut layers, "bn3", batch_norm(n));
        let main = prev;

        let shortcut = if stride != 1 || channels != n {
            let mut proj = conv(channels, n, 1, stride, rng);
            proj.id = format!("{p}proj");
            proj.inputs = vec![unit_input.clone()];
            let mut bn = batch_norm(n);
            bn.id = format!("{p}proj_bn");
            bn.inputs = vec![proj.id.clone()];
            let id = bn.id.clone();
            layers.push(proj);
            layers.push(bn);
            id
        } else {
            unit_input.clone()
        };
        let add_id = format!("{p}add");
        layers.push(LayerSpec::new(add_id.clone(), LayerKind::Add, vec![main, shortcut]));
        let out_id = format!("{p}out");
        layers.push(LayerSpec::new(out_id.clone(), LayerKind::ReLU, vec![add_id]));
        unit_input = out_id;
        channels = n;
    }
    Ok(layers)
}

/// Shortcut kind of every Add in `layers`: a projection when the second
/// branch ends in a parameterised layer, identity otherwise.
pub fn shortcut_kinds(layers: &[LayerSpec]) -> Vec<(String, ShortcutKind)> {
    layers
        .iter()
        .filter(|l| l.kind == LayerKind::Add)
        .map(|add| {
            let branch = add.inputs.get(1);
            let projected = layers
                .iter()
                .find(|l| Some(&l.id) == branch)
                .is_some_and(|l| l.kind.has_params());
            let kind = if projected {
                ShortcutKind::Projection
            } else {
                ShortcutKind::Identity
            };
            (add.id.clone(), kind)
        })
        .collect()
}

fn conv<R: Rng + ?Sized>(cin: usize, cout: usize, k: usize, stride: usize, rng: &mut R) -> LayerSpec {
    let fan_in = (k * k * cin) as f64;
    let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
    let shape = [k, k, cin, cout];
    let w = Tensor::from_fn(&shape, |_| dist.sample(rng));
    LayerSpec::new("", LayerKind::conv(cout, k, stride, Padding::Same), vec![])
        .with_weights(w)
        .with_bias(Tensor::zeros(&[cout]))
}

fn batch_norm(c: usize) -> LayerSpec {
    LayerSpec::new("", LayerKind::BatchNormFolded, vec![])
        .with_weights(Tensor::filled(&[c], 1.0))
        .with_bias(Tensor::zeros(&[c]))
}
