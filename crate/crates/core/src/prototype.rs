//! Activation maximisation: gradient ascent on
//! `log p_c(x) - lambda * ||x||^2` in input space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::backward::{backprop, check_class};
use crate::error::{Error, Result};
use crate::forward::{forward_with_trace, logits};
use crate::graph::NetworkGraph;
use crate::tensor::Tensor;

/// Halvings tried before a step is abandoned.
pub const MAX_HALVINGS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrototypeInit {
    Zeros,
    SeededGaussian { sigma: f64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeConfig {
    pub lambda: f64,
    pub steps: usize,
    pub step_size: f64,
    pub init: PrototypeInit,
    pub target_class: usize,
}

impl PrototypeConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Input(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Input(format!("step size must be > 0, got {}", self.step_size)));
        }
        if let PrototypeInit::SeededGaussian { sigma, .. } = self.init {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::Input(format!("sigma must be finite and >= 0, got {sigma}")));
            }
        }
        Ok(())
    }
}

/// Starting point for the ascent.
pub fn initial_input(shape: &[usize], init: PrototypeInit) -> Result<Tensor> {
    match init {
        PrototypeInit::Zeros => Ok(Tensor::zeros(shape)),
        PrototypeInit::SeededGaussian { sigma, seed } => {
            let dist = Normal::new(0.0, sigma).map_err(|e| Error::Input(format!("sigma: {e}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(Tensor::from_fn(shape, |_| dist.sample(&mut rng)))
        }
    }
}

fn log_softmax_at(z: &[f64], c: usize) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z[c] - lse
}

/// Objective value and its gradient at `x`.
pub fn objective(net: &NetworkGraph, x: &Tensor, class: usize, lambda: f64) -> Result<(f64, Tensor)> {
    let logit_layer = check_class(net, class)?;
    let trace = forward_with_trace(net, x)?;
    let z = logits(net, &trace)?;
    let value = log_softmax_at(z.data(), class) - lambda * x.norm_sq();

    // d log p_c / dz = e_c - p
    let m = z.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.data().iter().map(|v| (v - m).exp()).collect();
    let total: f64 = e.iter().sum();
    let seed: Vec<f64> = e
        .iter()
        .enumerate()
        .map(|(k, v)| f64::from(u8::from(k == class)) - v / total)
        .collect();
    let seed = Tensor::new(net.shapes()[logit_layer].clone(), seed)?;
    let mut grad = backprop(net, &trace, logit_layer, seed, false)?.input;
    for (g, xi) in grad.data_mut().iter_mut().zip(x.data()) {
        *g -= 2.0 * lambda * xi;
    }
    Ok((value, grad))
}

/// Prototype `x*` and the objective after every step (the initial value
/// first, so `steps + 1` entries). A step whose every halving would lower
/// the objective leaves `x` unchanged.
pub fn activation_maximize(net: &NetworkGraph, cfg: &PrototypeConfig) -> Result<(Tensor, Vec<f64>)> {
    cfg.validate()?;
    check_class(net, cfg.target_class)?;
    let mut x = initial_input(net.input_shape(), cfg.init)?;
    let (mut value, mut grad) = match objective(net, &x, cfg.target_class, cfg.lambda) {
        Ok(v) if v.0.is_finite() => v,
        Ok(_) | Err(Error::Numerics { .. }) => {
            return Err(Error::Numerics {
                location: "prototype objective at initialisation".into(),
            })
        }
        Err(e) => return Err(e),
    };
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    trace.push(value);

    for _ in 0..cfg.steps {
        let mut alpha = cfg.step_size;
        for _ in 0..=MAX_HALVINGS {
            let candidate = x.zip_map(&grad, |a, g| a + alpha * g);
            if let Ok((v, g)) = objective(net, &candidate, cfg.target_class, cfg.lambda) {
                if v.is_finite() && v >= value {
                    x = candidate;
                    value = v;
                    grad = g;
                    break;
                }
            }
            alpha *= 0.5;
        }
        trace.push(value);
    }
    Ok((x, trace))
}
