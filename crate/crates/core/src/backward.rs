//! Reverse-mode gradients through a traced forward pass.

use crate::error::{Error, Result};
use crate::forward::{forward_with_trace, ActivationTrace};
use crate::graph::{NetworkGraph, Source};
use crate::layer::LayerKind;
use crate::ops::{
    dense_backward_input, dense_backward_weight, softmax_backward, ConvGeom, PoolGeom,
};
use crate::tensor::Tensor;

/// Gradient of a scalar with respect to the input and, optionally, every
/// layer's `(weights, bias)`.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub input: Tensor,
    pub params: Vec<(Option<Tensor>, Option<Tensor>)>,
}

/// Back-propagates `seed` (the gradient w.r.t. the output of layer
/// `seed_layer`) down to the network input.
pub fn backprop(
    net: &NetworkGraph,
    trace: &ActivationTrace,
    seed_layer: usize,
    seed: Tensor,
    with_params: bool,
) -> Result<Gradients> {
    if seed.shape() != net.shapes()[seed_layer].as_slice() {
        return Err(Error::shape(
            &net.layers()[seed_layer].id,
            format!("seed gradient shaped {:?}", seed.shape()),
        ));
    }
    let n = net.layers().len();
    let mut grads: Vec<Option<Tensor>> = vec![None; n];
    grads[seed_layer] = Some(seed);
    let mut input_grad = Tensor::zeros(net.input_shape());
    let mut params = vec![(None, None); n];

    for i in (0..=seed_layer).rev() {
        let Some(g) = grads[i].take() else { continue };
        let layer = &net.layers()[i];
        let rec = &trace.records[i];
        let x = rec.inputs[0].as_ref();
        let mut input_grads: Vec<Tensor> = Vec::with_capacity(2);
        match &layer.kind {
            LayerKind::Dense { .. } => {
                let w = layer.weights.as_ref().expect("validated");
                let gx = dense_backward_input(g.data(), w.data(), x.len());
                input_grads.push(Tensor::new(x.shape().to_vec(), gx)?);
                if with_params {
                    let dw = Tensor::new(w.shape().to_vec(), dense_backward_weight(x.data(), g.data()))?;
                    let db = layer.bias.as_ref().map(|_| g.clone());
                    params[i] = (Some(dw), db);
                }
            }
            LayerKind::Conv2D {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let geom = ConvGeom::new(x.hwc().expect("validated"), *filters, *kernel, *stride, *padding);
                let w = layer.weights.as_ref().expect("validated");
                input_grads.push(Tensor::new(x.shape().to_vec(), geom.backward_input(g.data(), w.data()))?);
                if with_params {
                    let dw = Tensor::new(w.shape().to_vec(), geom.backward_weight(x.data(), g.data()))?;
                    let db = layer.bias.as_ref().map(|_| channel_sums(g.data(), *filters));
                    params[i] = (Some(dw), db);
                }
            }
            LayerKind::BatchNormFolded => {
                let scale = layer.weights.as_ref().expect("validated");
                let c = scale.len();
                let gx: Vec<f64> = g.data().iter().enumerate().map(|(k, v)| v * scale[k % c]).collect();
                input_grads.push(Tensor::new(x.shape().to_vec(), gx)?);
                if with_params {
                    let gx_prod: Vec<f64> = g.data().iter().zip(x.data()).map(|(a, b)| a * b).collect();
                    let ds = channel_sums(&gx_prod, c);
                    let db = layer.bias.as_ref().map(|_| channel_sums(g.data(), c));
                    params[i] = (Some(ds), db);
                }
            }
            LayerKind::ReLU => {
                input_grads.push(g.zip_map(&rec.pre_activation, |gv, p| if p > 0.0 { gv } else { 0.0 }));
            }
            LayerKind::MaxPool2D { window, stride } => {
                let geom = PoolGeom::new(x.hwc().expect("validated"), *window, *stride);
                let mut gx = Tensor::zeros(x.shape());
                for (k, src) in geom.argmax(x.data()).into_iter().enumerate() {
                    gx[src] += g[k];
                }
                input_grads.push(gx);
            }
            LayerKind::AvgPool2D { window, stride } => {
                let geom = PoolGeom::new(x.hwc().expect("validated"), *window, *stride);
                input_grads.push(Tensor::new(x.shape().to_vec(), geom.spread_evenly(g.data()))?);
            }
            LayerKind::Flatten => input_grads.push(g.reshape(x.shape())?),
            LayerKind::Softmax => {
                let classes = *x.shape().last().expect("validated");
                let gx = softmax_backward(rec.output.data(), g.data(), classes);
                input_grads.push(Tensor::new(x.shape().to_vec(), gx)?);
            }
            LayerKind::Add => {
                input_grads.push(g.clone());
                input_grads.push(g);
            }
        }
        for (src, gx) in net.sources(i).iter().zip(input_grads) {
            match *src {
                Source::Input => input_grad.add_assign(&gx),
                Source::Layer(j) => match &mut grads[j] {
                    Some(acc) => acc.add_assign(&gx),
                    slot @ None => *slot = Some(gx),
                },
            }
        }
    }
    Ok(Gradients {
        input: input_grad,
        params,
    })
}

fn channel_sums(values: &[f64], c: usize) -> Tensor {
    let mut out = vec![0.0; c];
    for (k, v) in values.iter().enumerate() {
        out[k % c] += v;
    }
    Tensor::from_vec(out)
}

pub(crate) fn check_class(net: &NetworkGraph, class_index: usize) -> Result<usize> {
    let idx = net
        .logit_layer()
        .ok_or_else(|| Error::Graph("network has no logit layer".into()))?;
    let count = net.output_classes();
    if class_index >= count {
        return Err(Error::Index {
            index: class_index,
            count,
        });
    }
    Ok(idx)
}

/// Gradient of the pre-softmax logit `class_index` with respect to the input.
pub fn gradient(net: &NetworkGraph, input: &Tensor, class_index: usize) -> Result<Tensor> {
    let logit_layer = check_class(net, class_index)?;
    let trace = forward_with_trace(net, input)?;
    gradient_from_trace(net, &trace, logit_layer, class_index)
}

pub(crate) fn gradient_from_trace(
    net: &NetworkGraph,
    trace: &ActivationTrace,
    logit_layer: usize,
    class_index: usize,
) -> Result<Tensor> {
    let mut seed = Tensor::zeros(&net.shapes()[logit_layer]);
    seed[class_index] = 1.0;
    Ok(backprop(net, trace, logit_layer, seed, false)?.input)
}

/// Outcome of comparing the analytic gradient with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    /// Input coordinates whose ±step perturbation changes a ReLU gate or a
    /// max-pool winner; the difference quotient is meaningless there.
    pub kinks: Vec<usize>,
    pub checked: usize,
}

/// Compares `gradient` with central finite differences of step `step`.
///
/// Per coordinate the error is `|analytic - numeric| / max(|analytic|,
/// |numeric|, 1e-12)`; the maximum over non-kink coordinates is returned.
pub fn check_gradient(
    net: &NetworkGraph,
    input: &Tensor,
    class_index: usize,
    step: f64,
) -> Result<GradientCheck> {
    if !(step > 0.0) {
        return Err(Error::Input(format!("finite-difference step must be positive, got {step}")));
    }
    let logit_layer = check_class(net, class_index)?;
    let trace = forward_with_trace(net, input)?;
    let analytic = gradient_from_trace(net, &trace, logit_layer, class_index)?;
    let base_pattern = gate_pattern(net, &trace);

    let mut max_rel_error: f64 = 0.0;
    let mut kinks = Vec::new();
    let mut checked = 0;
    for i in 0..input.len() {
        let mut plus = input.clone();
        plus[i] += step;
        let mut minus = input.clone();
        minus[i] -= step;
        let tp = forward_with_trace(net, &plus)?;
        let tm = forward_with_trace(net, &minus)?;
        if gate_pattern(net, &tp) != base_pattern || gate_pattern(net, &tm) != base_pattern {
            kinks.push(i);
            continue;
        }
        let fp = tp.records[logit_layer].output[class_index];
        let fm = tm.records[logit_layer].output[class_index];
        let numeric = (fp - fm) / (2.0 * step);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        max_rel_error = max_rel_error.max(err);
        checked += 1;
    }
    Ok(GradientCheck {
        max_rel_error,
        kinks,
        checked,
    })
}

/// The piecewise-linear region a pass landed in: ReLU gates and max-pool
/// winners.
fn gate_pattern(net: &NetworkGraph, trace: &ActivationTrace) -> Vec<usize> {
    let mut pattern = Vec::new();
    for (layer, rec) in net.layers().iter().zip(&trace.records) {
        match &layer.kind {
            LayerKind::ReLU => pattern.extend(rec.pre_activation.data().iter().map(|&v| usize::from(v > 0.0))),
            LayerKind::MaxPool2D { window, stride } => {
                let x = rec.inputs[0].as_ref();
                let geom = PoolGeom::new(x.hwc().expect("validated"), *window, *stride);
                pattern.extend(geom.argmax(x.data()));
            }
            _ => {}
        }
    }
    pattern
}
