//! Forward inference with optional activation tracing.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{NetworkGraph, Source};
use crate::layer::{LayerKind, LayerSpec};
use crate::ops::{dense_forward, softmax_last_axis, ConvGeom, PoolGeom};
use crate::tensor::Tensor;

/// Activations recorded for one layer during a traced forward pass.
#[derive(Clone, Debug)]
pub struct LayerRecord {
    pub layer_id: String,
    pub inputs: Vec<Arc<Tensor>>,
    /// The affine part of the layer (Dense/Conv/BN output before any
    /// nonlinearity), or the input of a ReLU/Softmax. Shape-only layers
    /// record their output.
    pub pre_activation: Arc<Tensor>,
    pub output: Arc<Tensor>,
}

/// One record per layer, ordered like the graph's layers.
#[derive(Clone, Debug)]
pub struct ActivationTrace {
    pub input: Arc<Tensor>,
    pub records: Vec<LayerRecord>,
}

impl ActivationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn output(&self) -> &Tensor {
        &self.records.last().expect("traces are never empty").output
    }

    pub fn source(&self, src: Source) -> &Arc<Tensor> {
        match src {
            Source::Input => &self.input,
            Source::Layer(j) => &self.records[j].output,
        }
    }
}

pub fn forward(net: &NetworkGraph, input: &Tensor) -> Result<Tensor> {
    let trace = forward_with_trace(net, input)?;
    let mut records = trace.records;
    let last = records.pop().expect("traces are never empty");
    drop(records);
    Ok(Arc::try_unwrap(last.output).unwrap_or_else(|shared| (*shared).clone()))
}

pub fn forward_with_trace(net: &NetworkGraph, input: &Tensor) -> Result<ActivationTrace> {
    if input.shape() != net.input_shape() {
        let first = net.layers().first().map_or("input", |l| l.id.as_str());
        return Err(Error::shape(
            first,
            format!(
                "input shaped {:?}, network expects {:?}",
                input.shape(),
                net.input_shape()
            ),
        ));
    }
    if !input.is_finite() {
        return Err(Error::Numerics {
            location: "input".into(),
        });
    }
    let input = Arc::new(input.clone());
    let mut records: Vec<LayerRecord> = Vec::with_capacity(net.layers().len());
    for (i, layer) in net.layers().iter().enumerate() {
        let inputs: Vec<Arc<Tensor>> = net
            .sources(i)
            .iter()
            .map(|s| match *s {
                Source::Input => input.clone(),
                Source::Layer(j) => records[j].output.clone(),
            })
            .collect();
        let refs: Vec<&Tensor> = inputs.iter().map(|t| t.as_ref()).collect();
        let (pre, out) = apply_layer(layer, &refs, &net.shapes()[i])?;
        if !out.is_finite() {
            return Err(Error::Numerics {
                location: layer.id.clone(),
            });
        }
        let out = Arc::new(out);
        let pre = pre.map_or_else(|| out.clone(), Arc::new);
        records.push(LayerRecord {
            layer_id: layer.id.clone(),
            inputs,
            pre_activation: pre,
            output: out,
        });
    }
    Ok(ActivationTrace { input, records })
}

/// Runs one layer. Returns `(pre_activation, output)`, where the
/// pre-activation is `None` when it coincides with the output.
pub(crate) fn apply_layer(
    layer: &LayerSpec,
    inputs: &[&Tensor],
    out_shape: &[usize],
) -> Result<(Option<Tensor>, Tensor)> {
    let x = inputs[0];
    let build = |data: Vec<f64>| Tensor::new(out_shape.to_vec(), data);
    match &layer.kind {
        LayerKind::Dense { units } => {
            let w = layer.weights.as_ref().expect("validated");
            let mut y = dense_forward(x.data(), w.data(), *units);
            add_bias(&mut y, layer.bias.as_ref());
            Ok((None, build(y)?))
        }
        LayerKind::Conv2D {
            filters,
            kernel,
            stride,
            padding,
        } => {
            let geom = ConvGeom::new(x.hwc().expect("validated"), *filters, *kernel, *stride, *padding);
            let w = layer.weights.as_ref().expect("validated");
            let mut y = geom.forward(x.data(), w.data());
            add_bias(&mut y, layer.bias.as_ref());
            Ok((None, build(y)?))
        }
        LayerKind::BatchNormFolded => {
            let scale = layer.weights.as_ref().expect("validated").data();
            let c = scale.len();
            let mut y: Vec<f64> = x
                .data()
                .iter()
                .enumerate()
                .map(|(i, v)| v * scale[i % c])
                .collect();
            add_bias(&mut y, layer.bias.as_ref());
            Ok((None, build(y)?))
        }
        LayerKind::ReLU => Ok((Some(x.clone()), x.map(relu))),
        LayerKind::MaxPool2D { window, stride } => {
            let geom = PoolGeom::new(x.hwc().expect("validated"), *window, *stride);
            let y = geom.argmax(x.data()).into_iter().map(|i| x[i]).collect();
            Ok((None, build(y)?))
        }
        LayerKind::AvgPool2D { window, stride } => {
            let geom = PoolGeom::new(x.hwc().expect("validated"), *window, *stride);
            Ok((None, build(geom.average(x.data()))?))
        }
        LayerKind::Flatten => Ok((None, build(x.data().to_vec())?)),
        LayerKind::Softmax => {
            let classes = *x.shape().last().expect("validated");
            Ok((Some(x.clone()), build(softmax_last_axis(x.data(), classes))?))
        }
        LayerKind::Add => Ok((None, x.zip_map(inputs[1], |a, b| a + b))),
    }
}

fn add_bias(y: &mut [f64], bias: Option<&Tensor>) {
    if let Some(b) = bias {
        let c = b.len();
        for (i, v) in y.iter_mut().enumerate() {
            *v += b[i % c];
        }
    }
}

#[inline]
pub fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// `e^{z_j} / sum_t e^{z_t}` over a rank-1 logit vector, stabilised by
/// subtracting the maximum.
pub fn softmax(z: &Tensor) -> Result<Tensor> {
    if z.rank() != 1 || z.len() < 2 {
        return Err(Error::Arity(format!(
            "softmax needs a rank-1 vector of at least 2 logits, got shape {:?}",
            z.shape()
        )));
    }
    if !z.is_finite() {
        return Err(Error::Numerics {
            location: "softmax input".into(),
        });
    }
    Ok(Tensor::from_vec(softmax_last_axis(z.data(), z.len())))
}

/// Pre-softmax logits of a traced pass, flattened.
pub fn logits(net: &NetworkGraph, trace: &ActivationTrace) -> Result<Tensor> {
    let idx = net
        .logit_layer()
        .ok_or_else(|| Error::Graph("softmax applied directly to the input has no logit layer".into()))?;
    Ok(Tensor::from_vec(trace.records[idx].output.data().to_vec()))
}

/// Class probabilities: the output of a softmax-terminated net, or the
/// softmax of the final layer otherwise.
pub fn class_probabilities(net: &NetworkGraph, input: &Tensor) -> Result<Tensor> {
    let out = forward(net, input)?;
    if net.ends_in_softmax() {
        Ok(Tensor::from_vec(out.into_data()))
    } else {
        softmax(&Tensor::from_vec(out.into_data()))
    }
}
