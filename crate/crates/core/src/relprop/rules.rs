//! Layer-local relevance redistribution.

use crate::error::{Error, Result};
use crate::forward::LayerRecord;
use crate::layer::{LayerKind, LayerSpec};
use crate::ops::{dense_backward_input, dense_forward, ConvGeom, PoolGeom};
use crate::tensor::Tensor;

use super::{InputBounds, Rule, RuleConfig};

/// Stabiliser used when splitting relevance across the two branches of an
/// Add layer.
pub const ADD_EPSILON: f64 = 1e-9;

/// `z + eps * sign(z)` with `sign(0) = +1`.
#[inline]
pub(crate) fn stabilize(z: f64, eps: f64) -> f64 {
    if z >= 0.0 {
        z + eps
    } else {
        z - eps
    }
}

/// `r / stabilize(z, eps)`, or 0 when the stabilised denominator vanishes.
#[inline]
fn ratio(r: f64, z: f64, eps: f64) -> f64 {
    let d = stabilize(z, eps);
    if d == 0.0 {
        0.0
    } else {
        r / d
    }
}

/// A bias-free linear map and its transpose.
pub(crate) trait LinearMap {
    fn apply(&self, x: &[f64], w: &[f64]) -> Vec<f64>;
    fn transpose(&self, s: &[f64], w: &[f64]) -> Vec<f64>;
}

pub(crate) struct DenseMap {
    pub n_in: usize,
    pub units: usize,
}

impl LinearMap for DenseMap {
    fn apply(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        dense_forward(x, w, self.units)
    }

    fn transpose(&self, s: &[f64], w: &[f64]) -> Vec<f64> {
        dense_backward_input(s, w, self.n_in)
    }
}

impl LinearMap for ConvGeom {
    fn apply(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        self.forward(x, w)
    }

    fn transpose(&self, s: &[f64], w: &[f64]) -> Vec<f64> {
        self.backward_input(s, w)
    }
}

/// Redistributes `r_out` onto the inputs of a linear map:
/// `R_j = sum_k (a_j v_jk / (sum_j a_j v_jk + eps sign)) R_k` with
/// `(a, v)` chosen by the rule (see the crate docs). Implemented as
/// `s = R / z`, `c = V^T s`, `R_j = a_j c_j`, which covers dense and
/// convolutional layers with one code path.
pub(crate) fn linear_relevance(
    map: &dyn LinearMap,
    x: &[f64],
    w: &[f64],
    r_out: &[f64],
    rule: Rule,
    epsilon: f64,
    bounds: Option<(&[f64], &[f64])>,
) -> Result<Vec<f64>> {
    let divide = |z: Vec<f64>, eps: f64| -> Vec<f64> {
        z.iter().zip(r_out).map(|(&z, &r)| ratio(r, z, eps)).collect()
    };
    let r_in = match rule {
        Rule::Lrp0 | Rule::LrpEps => {
            let eps = if rule == Rule::LrpEps { epsilon } else { 0.0 };
            let s = divide(map.apply(x, w), eps);
            let c = map.transpose(&s, w);
            x.iter().zip(c).map(|(a, c)| a * c).collect()
        }
        Rule::ZPlus => {
            let wp: Vec<f64> = w.iter().map(|v| v.max(0.0)).collect();
            let s = divide(map.apply(x, &wp), 0.0);
            let c = map.transpose(&s, &wp);
            x.iter().zip(c).map(|(a, c)| a * c).collect()
        }
        Rule::WSquare => {
            let w2: Vec<f64> = w.iter().map(|v| v * v).collect();
            let ones = vec![1.0; x.len()];
            let s = divide(map.apply(&ones, &w2), 0.0);
            map.transpose(&s, &w2)
        }
        Rule::ZB => {
            let (low, high) = bounds.expect("ZB bounds resolved by caller");
            let wp: Vec<f64> = w.iter().map(|v| v.max(0.0)).collect();
            let wn: Vec<f64> = w.iter().map(|v| v.min(0.0)).collect();
            let z: Vec<f64> = map
                .apply(x, w)
                .into_iter()
                .zip(map.apply(low, &wp))
                .zip(map.apply(high, &wn))
                .map(|((a, b), c)| a - b - c)
                .collect();
            let s = divide(z, 0.0);
            let c = map.transpose(&s, w);
            let cp = map.transpose(&s, &wp);
            let cn = map.transpose(&s, &wn);
            (0..x.len())
                .map(|j| x[j] * c[j] - low[j] * cp[j] - high[j] * cn[j])
                .collect()
        }
        Rule::GradientTimesInput => {
            return Err(Error::Input(
                "gradient x input is not a layer-local rule".into(),
            ))
        }
    };
    Ok(r_in)
}

/// Expands per-channel bounds over an activation shaped `shape`.
pub(crate) fn expand_bounds(
    bounds: &InputBounds,
    shape: &[usize],
    layer: &str,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let channels = *shape.last().expect("non-scalar activation");
    let n: usize = shape.iter().product();
    let k = bounds.low().len();
    if k != 1 && k != channels {
        return Err(Error::shape(
            layer,
            format!("{k} bound pairs for an input with {channels} channels"),
        ));
    }
    let pick = |v: &[f64], i: usize| if k == 1 { v[0] } else { v[i % channels] };
    Ok((
        (0..n).map(|i| pick(bounds.low(), i)).collect(),
        (0..n).map(|i| pick(bounds.high(), i)).collect(),
    ))
}

/// One redistribution step through a rank-1 dense layer, weights shaped
/// `[inputs, outputs]`.
pub fn step_linear(x: &Tensor, w: &Tensor, r_out: &Tensor, cfg: &RuleConfig) -> Result<Tensor> {
    let (n, m) = match *w.shape() {
        [n, m] => (n, m),
        _ => return Err(Error::shape("step_linear", format!("weights shaped {:?}", w.shape()))),
    };
    if x.shape() != [n] || r_out.shape() != [m] {
        return Err(Error::shape(
            "step_linear",
            format!(
                "x {:?} and relevance {:?} do not fit weights {:?}",
                x.shape(),
                r_out.shape(),
                w.shape()
            ),
        ));
    }
    let bounds = match cfg.input_bounds() {
        Some(b) => Some(expand_bounds(b, x.shape(), "step_linear")?),
        None => None,
    };
    let r = linear_relevance(
        &DenseMap { n_in: n, units: m },
        x.data(),
        w.data(),
        r_out.data(),
        cfg.rule(),
        cfg.epsilon(),
        bounds.as_ref().map(|(l, h)| (l.as_slice(), h.as_slice())),
    )?;
    Tensor::new(vec![n], r)
}

/// Pooling redistribution: max pooling sends each output's relevance to
/// the window's arg-max (first maximum in row-major order); average pooling
/// splits it evenly across the window.
pub fn step_pool(layer: &LayerSpec, record: &LayerRecord, r_out: &Tensor) -> Result<Tensor> {
    let x = record.inputs[0].as_ref();
    let hwc = x
        .hwc()
        .ok_or_else(|| Error::shape(&layer.id, "pooling input must be rank 3"))?;
    match &layer.kind {
        LayerKind::MaxPool2D { window, stride } => {
            let geom = PoolGeom::new(hwc, *window, *stride);
            check_len(&layer.id, r_out, geom.output_len())?;
            let mut r_in = Tensor::zeros(x.shape());
            for (k, src) in geom.argmax(x.data()).into_iter().enumerate() {
                r_in[src] += r_out[k];
            }
            Ok(r_in)
        }
        LayerKind::AvgPool2D { window, stride } => {
            let geom = PoolGeom::new(hwc, *window, *stride);
            check_len(&layer.id, r_out, geom.output_len())?;
            Tensor::new(x.shape().to_vec(), geom.spread_evenly(r_out.data()))
        }
        other => Err(Error::Input(format!("step_pool called on a {} layer", other.name()))),
    }
}

fn check_len(layer: &str, r: &Tensor, n: usize) -> Result<()> {
    if r.len() != n {
        return Err(Error::shape(layer, format!("relevance has {} values, expected {n}", r.len())));
    }
    Ok(())
}

/// Proportional split across the two branches of an Add layer:
/// `R_a = a / (a + b + eps sign) * R`, likewise for `b`.
pub fn step_add(record: &LayerRecord, r_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let (a, b) = (record.inputs[0].as_ref(), record.inputs[1].as_ref());
    if a.shape() != r_out.shape() || b.shape() != r_out.shape() {
        return Err(Error::shape(&record.layer_id, "Add relevance shape mismatch"));
    }
    let n = r_out.len();
    let mut ra = Vec::with_capacity(n);
    let mut rb = Vec::with_capacity(n);
    for i in 0..n {
        let s = ratio(r_out[i], a[i] + b[i], ADD_EPSILON);
        ra.push(a[i] * s);
        rb.push(b[i] * s);
    }
    Ok((
        Tensor::new(r_out.shape().to_vec(), ra)?,
        Tensor::new(r_out.shape().to_vec(), rb)?,
    ))
}
