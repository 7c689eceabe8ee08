//! Pixel-flipping evaluation of relevance maps.
//!
//! Pixels are flipped most-relevant first and the softmax probability of the
//! explained class is tracked; a lower area under that curve means the map
//! found the evidence the classifier actually uses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::class_probabilities;
use crate::graph::NetworkGraph;
use crate::relprop::{explain, RelevanceMap, Strategy};
use crate::tensor::Tensor;

pub const DEFAULT_BATCH_FRACTION: f64 = 0.01;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipPolicy {
    /// Flipped pixels become 0.
    #[default]
    Zero,
    /// Flipped pixels become the per-channel mean of the unperturbed image.
    ImageMean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlipCurve {
    pub fractions: Vec<f64>,
    pub scores: Vec<f64>,
    pub auc: f64,
    pub flip_value_policy: FlipPolicy,
    pub batch_fraction: f64,
    pub target_class: usize,
}

/// Trapezoidal area under `scores` over `fractions`.
pub fn auc(fractions: &[f64], scores: &[f64]) -> Result<f64> {
    if fractions.len() != scores.len() {
        return Err(Error::Input(format!(
            "{} fractions but {} scores",
            fractions.len(),
            scores.len()
        )));
    }
    if fractions.len() < 2 {
        return Err(Error::Input("a curve needs at least two points".into()));
    }
    if fractions.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Input("fractions must be strictly increasing".into()));
    }
    Ok(fractions
        .windows(2)
        .zip(scores.windows(2))
        .map(|(f, s)| (f[1] - f[0]) * (s[0] + s[1]) / 2.0)
        .sum())
}

/// Number of channels sharing one pixel: the last axis of rank-3 inputs.
fn channels_per_pixel(shape: &[usize]) -> usize {
    match shape {
        [_, _, c] => *c,
        _ => 1,
    }
}

/// Pixel indices ordered by descending relevance (summed over channels);
/// ties keep row-major order.
pub fn flip_order(values: &Tensor) -> Vec<usize> {
    let c = channels_per_pixel(values.shape());
    let per_pixel: Vec<f64> = values.data().chunks(c).map(|ch| ch.iter().sum()).collect();
    let mut order: Vec<usize> = (0..per_pixel.len()).collect();
    order.sort_by(|&a, &b| per_pixel[b].total_cmp(&per_pixel[a]));
    order
}

fn target_score(net: &NetworkGraph, x: &Tensor, class: usize) -> Result<f64> {
    Ok(class_probabilities(net, x)?[class])
}

pub fn pixel_flip_curve(
    net: &NetworkGraph,
    input: &Tensor,
    map: &RelevanceMap,
    policy: FlipPolicy,
    batch_fraction: f64,
) -> Result<FlipCurve> {
    if map.values.shape() != input.shape() {
        return Err(Error::shape(
            "relevance map",
            format!(
                "map shaped {:?} does not match input {:?}",
                map.values.shape(),
                input.shape()
            ),
        ));
    }
    if !(batch_fraction > 0.0 && batch_fraction <= 1.0) {
        return Err(Error::Input(format!("batch fraction must be in (0, 1], got {batch_fraction}")));
    }
    let class = map.target_class;
    let c = channels_per_pixel(input.shape());
    let pixels = input.len() / c;
    let fill: Vec<f64> = match policy {
        FlipPolicy::Zero => vec![0.0; c],
        FlipPolicy::ImageMean => (0..c)
            .map(|ch| input.data().iter().skip(ch).step_by(c).sum::<f64>() / pixels as f64)
            .collect(),
    };
    let batch = ((batch_fraction * pixels as f64).ceil() as usize).clamp(1, pixels);
    let order = flip_order(&map.values);

    let mut x = input.clone();
    let mut fractions = vec![0.0];
    let mut scores = vec![target_score(net, &x, class)?];
    let mut flipped = 0;
    while flipped < pixels {
        let end = (flipped + batch).min(pixels);
        for &p in &order[flipped..end] {
            x.data_mut()[p * c..(p + 1) * c].copy_from_slice(&fill);
        }
        flipped = end;
        fractions.push(flipped as f64 / pixels as f64);
        scores.push(target_score(net, &x, class)?);
    }
    let auc = auc(&fractions, &scores)?;
    Ok(FlipCurve {
        fractions,
        scores,
        auc,
        flip_value_policy: policy,
        batch_fraction,
        target_class: class,
    })
}

/// An attribution method under comparison.
#[derive(Clone, Debug, PartialEq)]
pub enum FlipMethod {
    Explain(Strategy),
    /// Uniform random relevance, seeded per image.
    Random,
}

impl FlipMethod {
    pub fn name(&self) -> String {
        match self {
            FlipMethod::Explain(s) => s.name(),
            FlipMethod::Random => "random".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub mean_auc: f64,
    /// Sample standard deviation (0 for a single image).
    pub std_auc: f64,
    /// Per-image AUCs in input order.
    pub aucs: Vec<f64>,
}

/// Relevance map for `method` on one image. Images are explained for
/// their predicted class.
pub fn method_map(
    net: &NetworkGraph,
    input: &Tensor,
    method: &FlipMethod,
    seed: u64,
    image_index: usize,
) -> Result<RelevanceMap> {
    let class = class_probabilities(net, input)?.argmax();
    match method {
        FlipMethod::Explain(strategy) => explain(net, input, class, strategy.clone()),
        FlipMethod::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(image_index as u64));
            let values = Tensor::from_fn(input.shape(), |_| rng.random::<f64>());
            Ok(RelevanceMap {
                values,
                start_value: 0.0,
                rule_used: Strategy::Uniform(crate::relprop::RuleConfig::lrp0()),
                target_class: class,
            })
        }
    }
}

/// Mean pixel-flipping AUC per method over `inputs`. `threads == 0` runs
/// sequentially; results do not depend on scheduling.
pub fn compare_methods(
    net: &NetworkGraph,
    inputs: &[Tensor],
    methods: &[FlipMethod],
    policy: FlipPolicy,
    batch_fraction: f64,
    seed: u64,
    threads: usize,
) -> Result<Vec<MethodSummary>> {
    if inputs.is_empty() {
        return Err(Error::Input("compare needs at least one image".into()));
    }
    let per_image = |(i, x): (usize, &Tensor)| -> Result<Vec<f64>> {
        methods
            .iter()
            .map(|m| {
                let map = method_map(net, x, m, seed, i)?;
                Ok(pixel_flip_curve(net, x, &map, policy, batch_fraction)?.auc)
            })
            .collect()
    };
    let rows: Vec<Vec<f64>> = if threads == 0 {
        inputs.iter().enumerate().map(per_image).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Input(format!("thread pool: {e}")))?;
        pool.install(|| {
            inputs
                .par_iter()
                .enumerate()
                .map(per_image)
                .collect::<Result<Vec<_>>>()
        })?
    };
    Ok(methods
        .iter()
        .enumerate()
        .map(|(m, method)| {
            let aucs: Vec<f64> = rows.iter().map(|r| r[m]).collect();
            let (mean_auc, std_auc) = mean_std(&aucs);
            MethodSummary {
                method: method.name(),
                mean_auc,
                std_auc,
                aucs,
            }
        })
        .collect())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
