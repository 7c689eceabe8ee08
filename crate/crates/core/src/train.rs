//! Plain per-example SGD on cross-entropy, enough to produce small
//! classifiers worth explaining.

use crate::backward::backprop;
use crate::error::{Error, Result};
use crate::forward::{class_probabilities, forward_with_trace};
use crate::graph::NetworkGraph;
use crate::ops::softmax_last_axis;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: usize,
    pub final_loss: f64,
    pub train_accuracy: f64,
}

/// Trains a private copy of `net` for `epochs` passes over `dataset` in
/// order, one SGD step per example.
pub fn train_toy(
    net: &NetworkGraph,
    dataset: &[(Tensor, usize)],
    epochs: usize,
    lr: f64,
) -> Result<(NetworkGraph, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if !(lr > 0.0) {
        return Err(Error::Input(format!("learning rate must be positive, got {lr}")));
    }
    let classes = net.output_classes();
    if let Some((_, bad)) = dataset.iter().find(|(_, y)| *y >= classes) {
        return Err(Error::Input(format!("label {bad} outside [0, {classes})")));
    }
    let logit_layer = net
        .logit_layer()
        .ok_or_else(|| Error::Graph("network has no logit layer".into()))?;
    if net.shapes()[logit_layer] != [classes] {
        return Err(Error::Input(format!(
            "training needs rank-1 logits of length {classes}, got {:?}",
            net.shapes()[logit_layer]
        )));
    }

    let mut net = net.clone();
    for _ in 0..epochs {
        for (x, y) in dataset {
            let trace = forward_with_trace(&net, x)?;
            let logits = trace.records[logit_layer].output.data();
            let mut seed = softmax_last_axis(logits, classes);
            seed[*y] -= 1.0;
            let grads = backprop(&net, &trace, logit_layer, Tensor::from_vec(seed), true)?;
            for (layer, (dw, db)) in net.layers_mut().iter_mut().zip(grads.params) {
                if let (Some(w), Some(dw)) = (layer.weights.as_mut(), dw) {
                    sgd_step(w, &dw, lr);
                }
                if let (Some(b), Some(db)) = (layer.bias.as_mut(), db) {
                    sgd_step(b, &db, lr);
                }
            }
        }
    }

    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, y) in dataset {
        let p = class_probabilities(&net, x)?;
        loss -= p[*y].max(1e-300).ln();
        if p.argmax() == *y {
            correct += 1;
        }
    }
    let n = dataset.len() as f64;
    let report = TrainReport {
        epochs,
        final_loss: loss / n,
        train_accuracy: correct as f64 / n,
    };
    Ok((net, report))
}

fn sgd_step(param: &mut Tensor, grad: &Tensor, lr: f64) {
    for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= lr * g;
    }
}

/// Fraction of examples whose arg-max class matches the label.
pub fn accuracy(net: &NetworkGraph, dataset: &[(Tensor, usize)]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Input("evaluation set is empty".into()));
    }
    let mut correct = 0usize;
    for (x, y) in dataset {
        if class_probabilities(net, x)?.argmax() == *y {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}
