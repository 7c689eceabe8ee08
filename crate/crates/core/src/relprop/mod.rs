//! Layer-wise relevance propagation.
//!
//! A forward pass is traced, the pre-softmax logit of the target class is
//! injected as relevance at the logit layer, and relevance is walked back
//! layer by layer:
//!
//! | rule     | activation `a_j` | weight `v_jk`         |
//! |----------|------------------|-----------------------|
//! | LRP-0    | `x_j`            | `w_jk`                |
//! | LRP-ε    | `x_j`            | `w_jk`, `+ε·sign(z)`  |
//! | z⁺       | `x_j`            | `max(w_jk, 0)`        |
//! | w²       | `1`              | `w_jk²`               |
//! | z^B      | `x_j w_jk − l_j w⁺_jk − h_j w⁻_jk` (joint numerator) |
//!
//! with `R_j = Σ_k a_j v_jk / (Σ_j a_j v_jk) · R_k`. Biases receive no
//! relevance. ReLU layers gate relevance on their output, pooling routes it
//! to the arg-max (max) or splits it evenly (average), and Add layers split
//! it in proportion to the two branch activations.

mod rules;

use std::fmt;

use crate::backward::{check_class, gradient_from_trace};
use crate::error::{Error, Result};
use crate::forward::{forward_with_trace, ActivationTrace};
use crate::graph::{NetworkGraph, Source};
use crate::layer::LayerKind;
use crate::ops::ConvGeom;
use crate::tensor::Tensor;

pub use rules::{step_add, step_linear, step_pool, ADD_EPSILON};
use rules::{expand_bounds, linear_relevance, stabilize, DenseMap, LinearMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rule {
    Lrp0,
    LrpEps,
    ZPlus,
    ZB,
    WSquare,
    GradientTimesInput,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::Lrp0 => "lrp0",
            Rule::LrpEps => "lrp-eps",
            Rule::ZPlus => "zplus",
            Rule::ZB => "zb",
            Rule::WSquare => "wsquare",
            Rule::GradientTimesInput => "gxi",
        }
    }
}

/// Per-channel input range `[low, high]` for the z^B rule. A single pair
/// applies to every channel.
#[derive(Clone, Debug, PartialEq)]
pub struct InputBounds {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl InputBounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.is_empty() || low.len() != high.len() {
            return Err(Error::Input("bounds need matching, non-empty low/high lists".into()));
        }
        if low.iter().zip(&high).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::Input(format!("bounds need finite low < high, got {low:?} / {high:?}")));
        }
        Ok(Self { low, high })
    }

    pub fn uniform(low: f64, high: f64) -> Result<Self> {
        Self::new(vec![low], vec![high])
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }
}

/// A single propagation rule with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct RuleConfig {
    rule: Rule,
    epsilon: f64,
    input_bounds: Option<InputBounds>,
}

impl RuleConfig {
    pub fn new(rule: Rule, epsilon: f64, input_bounds: Option<InputBounds>) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::Input(format!("epsilon must be finite and >= 0, got {epsilon}")));
        }
        if rule == Rule::LrpEps && epsilon == 0.0 {
            return Err(Error::Input("LRP-epsilon needs epsilon > 0".into()));
        }
        if (rule == Rule::ZB) != input_bounds.is_some() {
            return Err(Error::Input("input bounds are required by, and only by, the zB rule".into()));
        }
        Ok(Self {
            rule,
            epsilon,
            input_bounds,
        })
    }

    pub fn lrp0() -> Self {
        Self::simple(Rule::Lrp0)
    }

    pub fn lrp_eps(epsilon: f64) -> Result<Self> {
        Self::new(Rule::LrpEps, epsilon, None)
    }

    pub fn zplus() -> Self {
        Self::simple(Rule::ZPlus)
    }

    pub fn zb(bounds: InputBounds) -> Self {
        Self {
            rule: Rule::ZB,
            epsilon: 0.0,
            input_bounds: Some(bounds),
        }
    }

    pub fn wsquare() -> Self {
        Self::simple(Rule::WSquare)
    }

    pub fn gradient_times_input() -> Self {
        Self::simple(Rule::GradientTimesInput)
    }

    fn simple(rule: Rule) -> Self {
        Self {
            rule,
            epsilon: 0.0,
            input_bounds: None,
        }
    }

    pub fn rule(&self) -> Rule {
        self.rule
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn input_bounds(&self) -> Option<&InputBounds> {
        self.input_bounds.as_ref()
    }
}

/// Deep Taylor decomposition: z⁺ on every hidden linear layer, and z^B
/// (bounded pixels) or w² (unbounded pixels) on the layers that read the
/// input.
#[derive(Clone, Debug, PartialEq)]
pub struct DeepTaylorPreset {
    pub input_rule: RuleConfig,
}

impl DeepTaylorPreset {
    pub fn unbounded() -> Self {
        Self {
            input_rule: RuleConfig::wsquare(),
        }
    }

    pub fn bounded(bounds: InputBounds) -> Self {
        Self {
            input_rule: RuleConfig::zb(bounds),
        }
    }

    pub fn hidden_rule(&self) -> RuleConfig {
        RuleConfig::zplus()
    }
}

/// How relevance is assigned across the network.
#[derive(Clone, Debug, PartialEq)]
pub enum Strategy {
    /// The same rule on every linear layer.
    Uniform(RuleConfig),
    DeepTaylor(DeepTaylorPreset),
}

impl Strategy {
    fn rule_for(&self, reads_input: bool) -> RuleConfig {
        match self {
            Strategy::Uniform(cfg) => cfg.clone(),
            Strategy::DeepTaylor(p) if reads_input => p.input_rule.clone(),
            Strategy::DeepTaylor(p) => p.hidden_rule(),
        }
    }

    fn epsilon(&self) -> f64 {
        match self {
            Strategy::Uniform(cfg) if cfg.rule == Rule::LrpEps => cfg.epsilon,
            _ => 0.0,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Strategy::Uniform(cfg) => cfg.rule.name().to_string(),
            Strategy::DeepTaylor(p) => format!("deep-taylor({})", p.input_rule.rule.name()),
        }
    }
}

impl From<RuleConfig> for Strategy {
    fn from(cfg: RuleConfig) -> Self {
        Strategy::Uniform(cfg)
    }
}

impl From<DeepTaylorPreset> for Strategy {
    fn from(p: DeepTaylorPreset) -> Self {
        Strategy::DeepTaylor(p)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Per-pixel relevance for one explained class.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceMap {
    pub values: Tensor,
    /// Relevance injected at the output (the target logit).
    pub start_value: f64,
    pub rule_used: Strategy,
    pub target_class: usize,
}

/// Relevance at every layer output, alongside the input relevance.
#[derive(Clone, Debug)]
pub struct LayerRelevances {
    pub input: Tensor,
    /// Indexed like the network's layers; `None` for layers above the
    /// logit layer or never reached.
    pub layers: Vec<Option<Tensor>>,
}

/// Layers that read the input through no other Dense/Conv layer.
fn input_facing(net: &NetworkGraph) -> Vec<bool> {
    let n = net.layers().len();
    let mut behind_linear = vec![false; n];
    let mut facing = vec![false; n];
    for i in 0..n {
        let upstream_linear = net.sources(i).iter().any(|s| match *s {
            Source::Input => false,
            Source::Layer(j) => behind_linear[j] || net.layers()[j].kind.is_linear(),
        });
        behind_linear[i] = upstream_linear;
        facing[i] = net.layers()[i].kind.is_linear() && !upstream_linear;
    }
    facing
}

/// Propagates `start` (relevance at the output of `start_layer`) down to
/// the input of a traced pass.
pub fn propagate(
    net: &NetworkGraph,
    trace: &ActivationTrace,
    start_layer: usize,
    start: Tensor,
    strategy: &Strategy,
) -> Result<LayerRelevances> {
    if let Strategy::Uniform(cfg) = strategy {
        if cfg.rule == Rule::GradientTimesInput {
            return Err(Error::UnsupportedRule {
                layer: net.layers()[start_layer].id.clone(),
                rule: "gxi (use gradient_times_input)".into(),
            });
        }
    }
    if start.shape() != net.shapes()[start_layer].as_slice() {
        return Err(Error::shape(
            &net.layers()[start_layer].id,
            format!("start relevance shaped {:?}", start.shape()),
        ));
    }
    let n = net.layers().len();
    let facing = input_facing(net);
    let mut rel: Vec<Option<Tensor>> = vec![None; n];
    let mut kept: Vec<Option<Tensor>> = vec![None; n];
    rel[start_layer] = Some(start);
    let mut input_rel = Tensor::zeros(net.input_shape());

    for i in (0..=start_layer).rev() {
        let Some(r) = rel[i].take() else { continue };
        let layer = &net.layers()[i];
        let rec = &trace.records[i];
        let x = rec.inputs[0].as_ref();
        let mut r_ins: Vec<Tensor> = Vec::with_capacity(2);
        match &layer.kind {
            LayerKind::Dense { units } => {
                let map = DenseMap {
                    n_in: x.len(),
                    units: *units,
                };
                r_ins.push(linear_step(&map, layer, x, &r, &strategy.rule_for(facing[i]))?);
            }
            LayerKind::Conv2D {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let geom = ConvGeom::new(x.hwc().expect("validated"), *filters, *kernel, *stride, *padding);
                r_ins.push(linear_step(&geom, layer, x, &r, &strategy.rule_for(facing[i]))?);
            }
            LayerKind::BatchNormFolded => {
                let scale = layer.weights.as_ref().expect("validated");
                let c = scale.len();
                let eps = strategy.epsilon();
                let data = (0..x.len())
                    .map(|k| {
                        let z = x[k] * scale[k % c];
                        let d = stabilize(z, eps);
                        if d == 0.0 {
                            0.0
                        } else {
                            z / d * r[k]
                        }
                    })
                    .collect();
                r_ins.push(Tensor::new(x.shape().to_vec(), data)?);
            }
            LayerKind::ReLU => {
                r_ins.push(r.zip_map(&rec.output, |rv, a| if a > 0.0 { rv } else { 0.0 }));
            }
            LayerKind::MaxPool2D { .. } | LayerKind::AvgPool2D { .. } => {
                r_ins.push(step_pool(layer, rec, &r)?);
            }
            LayerKind::Flatten => r_ins.push(r.clone().reshape(x.shape())?),
            LayerKind::Add => {
                let (ra, rb) = step_add(rec, &r)?;
                r_ins.push(ra);
                r_ins.push(rb);
            }
            LayerKind::Softmax => {
                return Err(Error::UnsupportedRule {
                    layer: layer.id.clone(),
                    rule: strategy.name(),
                })
            }
        }
        kept[i] = Some(r);
        for (src, r_in) in net.sources(i).iter().zip(r_ins) {
            match *src {
                Source::Input => input_rel.add_assign(&r_in),
                Source::Layer(j) => match &mut rel[j] {
                    Some(acc) => acc.add_assign(&r_in),
                    slot @ None => *slot = Some(r_in),
                },
            }
        }
    }
    Ok(LayerRelevances {
        input: input_rel,
        layers: kept,
    })
}

fn linear_step(
    map: &dyn LinearMap,
    layer: &crate::layer::LayerSpec,
    x: &Tensor,
    r: &Tensor,
    cfg: &RuleConfig,
) -> Result<Tensor> {
    let w = layer.weights.as_ref().expect("validated");
    let bounds = match cfg.input_bounds() {
        Some(b) => Some(expand_bounds(b, x.shape(), &layer.id)?),
        None => None,
    };
    let data = linear_relevance(
        map,
        x.data(),
        w.data(),
        r.data(),
        cfg.rule(),
        cfg.epsilon(),
        bounds.as_ref().map(|(l, h)| (l.as_slice(), h.as_slice())),
    )?;
    Tensor::new(x.shape().to_vec(), data)
}

/// Explains `target_class`: relevance starts as the class's pre-softmax
/// logit and is propagated back to the input.
pub fn explain(
    net: &NetworkGraph,
    input: &Tensor,
    target_class: usize,
    strategy: impl Into<Strategy>,
) -> Result<RelevanceMap> {
    explain_with_layers(net, input, target_class, strategy).map(|(map, _)| map)
}

/// Like [`explain`], also returning the relevance of every layer.
pub fn explain_with_layers(
    net: &NetworkGraph,
    input: &Tensor,
    target_class: usize,
    strategy: impl Into<Strategy>,
) -> Result<(RelevanceMap, Option<LayerRelevances>)> {
    let strategy = strategy.into();
    let logit_layer = check_class(net, target_class)?;
    let trace = forward_with_trace(net, input)?;
    let start_value = trace.records[logit_layer].output[target_class];
    if matches!(&strategy, Strategy::Uniform(cfg) if cfg.rule == Rule::GradientTimesInput) {
        let grad = gradient_from_trace(net, &trace, logit_layer, target_class)?;
        let map = RelevanceMap {
            values: grad.zip_map(input, |g, x| g * x),
            start_value,
            rule_used: strategy,
            target_class,
        };
        return Ok((map, None));
    }
    let mut start = Tensor::zeros(&net.shapes()[logit_layer]);
    start[target_class] = start_value;
    let layers = propagate(net, &trace, logit_layer, start, &strategy)?;
    let map = RelevanceMap {
        values: layers.input.clone(),
        start_value,
        rule_used: strategy,
        target_class,
    };
    Ok((map, Some(layers)))
}

/// `input ⊙ ∂logit_c/∂input`.
pub fn gradient_times_input(net: &NetworkGraph, input: &Tensor, target_class: usize) -> Result<RelevanceMap> {
    explain(net, input, target_class, RuleConfig::gradient_times_input())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConservationReport {
    pub sum_in: f64,
    pub start_value: f64,
    /// `(start - sum_in) / max(|start|, 1e-12)`
    pub leak: f64,
}

pub fn conservation_report(map: &RelevanceMap) -> ConservationReport {
    let sum_in = map.values.sum();
    ConservationReport {
        sum_in,
        start_value: map.start_value,
        leak: (map.start_value - sum_in) / map.start_value.abs().max(1e-12),
    }
}
