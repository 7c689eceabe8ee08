//! Layer definitions and per-layer shape inference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reserved id naming the network input in a layer's `inputs` list.
pub const INPUT_ID: &str = "input";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    Same,
}

/// The operation a layer performs, with its structural parameters.
///
/// Spatial tensors are laid out `[rows, cols, channels]`. Convolution
/// kernels are `[kernel_rows, kernel_cols, in_channels, filters]` and dense
/// weights `[in_features, units]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params")]
pub enum LayerKind {
    Dense {
        units: usize,
    },
    Conv2D {
        filters: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: Padding,
    },
    ReLU,
    MaxPool2D {
        window: [usize; 2],
        stride: [usize; 2],
    },
    AvgPool2D {
        window: [usize; 2],
        stride: [usize; 2],
    },
    Flatten,
    Softmax,
    Add,
    /// Inference-time batch norm: `y = scale * x + shift` per channel (last
    /// axis). `weights` holds the scale, `bias` the shift.
    BatchNormFolded,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "Dense",
            LayerKind::Conv2D { .. } => "Conv2D",
            LayerKind::ReLU => "ReLU",
            LayerKind::MaxPool2D { .. } => "MaxPool2D",
            LayerKind::AvgPool2D { .. } => "AvgPool2D",
            LayerKind::Flatten => "Flatten",
            LayerKind::Softmax => "Softmax",
            LayerKind::Add => "Add",
            LayerKind::BatchNormFolded => "BatchNormFolded",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            LayerKind::Add => 2,
            _ => 1,
        }
    }

    /// Dense and Conv2D: the layers relevance rules act on.
    pub fn is_linear(&self) -> bool {
        matches!(self, LayerKind::Dense { .. } | LayerKind::Conv2D { .. })
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerKind::Dense { .. } | LayerKind::Conv2D { .. } | LayerKind::BatchNormFolded
        )
    }

    pub fn max_pool(window: usize) -> Self {
        LayerKind::MaxPool2D {
            window: [window, window],
            stride: [window, window],
        }
    }

    pub fn avg_pool(window: usize) -> Self {
        LayerKind::AvgPool2D {
            window: [window, window],
            stride: [window, window],
        }
    }

    pub fn conv(filters: usize, kernel: usize, stride: usize, padding: Padding) -> Self {
        LayerKind::Conv2D {
            filters,
            kernel: [kernel, kernel],
            stride,
            padding,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
    pub weights: Option<Tensor>,
    pub bias: Option<Tensor>,
    pub inputs: Vec<String>,
}

impl LayerSpec {
    pub fn new(id: impl Into<String>, kind: LayerKind, inputs: Vec<String>) -> Self {
        Self {
            id: id.into(),
            kind,
            weights: None,
            bias: None,
            inputs,
        }
    }

    pub fn with_weights(mut self, weights: Tensor) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn with_bias(mut self, bias: Tensor) -> Self {
        self.bias = Some(bias);
        self
    }

    pub fn param_count(&self) -> usize {
        self.weights.as_ref().map_or(0, Tensor::len) + self.bias.as_ref().map_or(0, Tensor::len)
    }

    /// Infers the output shape from the input shapes and checks parameter
    /// shapes along the way.
    pub fn infer_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        let err = |msg: String| Error::shape(&self.id, msg);
        if inputs.len() != self.kind.arity() {
            return Err(err(format!(
                "{} takes {} input(s), got {}",
                self.kind.name(),
                self.kind.arity(),
                inputs.len()
            )));
        }
        let x = inputs[0];
        let out = match &self.kind {
            LayerKind::Dense { units } => {
                if x.len() != 1 {
                    return Err(err(format!("Dense needs a rank-1 input (use Flatten), got {x:?}")));
                }
                if *units == 0 {
                    return Err(err("Dense units must be positive".into()));
                }
                self.check_weights(&[x[0], *units], true)?;
                self.check_bias(*units)?;
                vec![*units]
            }
            LayerKind::Conv2D {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let (h, w, c) = spatial(x).ok_or_else(|| err(format!("Conv2D needs [rows, cols, channels], got {x:?}")))?;
                if *filters == 0 || kernel[0] == 0 || kernel[1] == 0 || *stride == 0 {
                    return Err(err("Conv2D filters, kernel and stride must be positive".into()));
                }
                let oh = conv_extent(h, kernel[0], *stride, *padding).ok_or_else(|| {
                    err(format!("kernel {} larger than input rows {h}", kernel[0]))
                })?;
                let ow = conv_extent(w, kernel[1], *stride, *padding).ok_or_else(|| {
                    err(format!("kernel {} larger than input cols {w}", kernel[1]))
                })?;
                self.check_weights(&[kernel[0], kernel[1], c, *filters], true)?;
                self.check_bias(*filters)?;
                vec![oh, ow, *filters]
            }
            LayerKind::MaxPool2D { window, stride } | LayerKind::AvgPool2D { window, stride } => {
                let (h, w, c) = spatial(x).ok_or_else(|| err(format!("pooling needs [rows, cols, channels], got {x:?}")))?;
                if window.contains(&0) || stride.contains(&0) {
                    return Err(err("pool window and stride must be positive".into()));
                }
                if window[0] > h || window[1] > w {
                    return Err(err(format!("pool window {window:?} exceeds input {h}x{w}")));
                }
                self.check_no_params()?;
                vec![(h - window[0]) / stride[0] + 1, (w - window[1]) / stride[1] + 1, c]
            }
            LayerKind::ReLU => {
                self.check_no_params()?;
                x.to_vec()
            }
            LayerKind::Flatten => {
                self.check_no_params()?;
                vec![x.iter().product()]
            }
            LayerKind::Softmax => {
                self.check_no_params()?;
                if x.last().copied().unwrap_or(0) < 2 {
                    return Err(err(format!("softmax needs at least 2 classes on the last axis, got {x:?}")));
                }
                x.to_vec()
            }
            LayerKind::Add => {
                self.check_no_params()?;
                if inputs[0] != inputs[1] {
                    return Err(err(format!(
                        "Add inputs differ in shape: {:?} vs {:?}",
                        inputs[0], inputs[1]
                    )));
                }
                x.to_vec()
            }
            LayerKind::BatchNormFolded => {
                let c = *x.last().ok_or_else(|| err("BatchNormFolded needs a non-scalar input".into()))?;
                self.check_weights(&[c], true)?;
                self.check_bias(c)?;
                x.to_vec()
            }
        };
        Ok(out)
    }

    fn check_weights(&self, expected: &[usize], required: bool) -> Result<()> {
        match &self.weights {
            Some(w) if w.shape() != expected => Err(Error::shape(
                &self.id,
                format!("weights shaped {:?}, expected {expected:?}", w.shape()),
            )),
            None if required => Err(Error::shape(&self.id, "missing weights")),
            _ => Ok(()),
        }
    }

    fn check_bias(&self, n: usize) -> Result<()> {
        match &self.bias {
            Some(b) if b.shape() != [n] => Err(Error::shape(
                &self.id,
                format!("bias shaped {:?}, expected [{n}]", b.shape()),
            )),
            _ => Ok(()),
        }
    }

    fn check_no_params(&self) -> Result<()> {
        if self.weights.is_some() || self.bias.is_some() {
            return Err(Error::shape(
                &self.id,
                format!("{} takes no parameters", self.kind.name()),
            ));
        }
        Ok(())
    }
}

fn spatial(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [h, w, c] => Some((h, w, c)),
        _ => None,
    }
}

/// Output extent of a convolution along one axis, `None` if the kernel does
/// not fit a valid convolution.
pub fn conv_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<usize> {
    match padding {
        Padding::Valid => (input >= kernel).then(|| (input - kernel) / stride + 1),
        Padding::Same => Some(input.div_ceil(stride)),
    }
}

/// Leading padding for `same` convolutions (extra padding goes at the end).
pub fn same_pad_before(input: usize, kernel: usize, stride: usize) -> usize {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    total / 2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_shapes() {
        let layer = LayerSpec::new("c", LayerKind::conv(4, 3, 2, Padding::Valid), vec![INPUT_ID.into()])
            .with_weights(Tensor::zeros(&[3, 3, 2, 4]));
        assert_eq!(layer.infer_shape(&[&[7, 9, 2]]).unwrap(), vec![3, 4, 4]);
        let same = LayerSpec::new("s", LayerKind::conv(4, 3, 2, Padding::Same), vec![INPUT_ID.into()])
            .with_weights(Tensor::zeros(&[3, 3, 2, 4]));
        assert_eq!(same.infer_shape(&[&[7, 8, 2]]).unwrap(), vec![4, 4, 4]);
    }

    #[test]
    fn wrong_weight_shape_names_layer() {
        let layer = LayerSpec::new("dense7", LayerKind::Dense { units: 3 }, vec![INPUT_ID.into()])
            .with_weights(Tensor::zeros(&[4, 2]));
        match layer.infer_shape(&[&[4]]) {
            Err(Error::Shape { layer, .. }) => assert_eq!(layer, "dense7"),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn add_requires_identical_shapes() {
        let layer = LayerSpec::new("a", LayerKind::Add, vec!["x".into(), "y".into()]);
        assert!(layer.infer_shape(&[&[2, 2, 1], &[2, 2, 1]]).is_ok());
        assert!(layer.infer_shape(&[&[2, 2, 1], &[2, 2, 2]]).is_err());
        assert!(layer.infer_shape(&[&[2, 2, 1]]).is_err());
    }

    #[test]
    fn same_padding_split() {
        assert_eq!(same_pad_before(5, 3, 1), 1);
        assert_eq!(same_pad_before(8, 3, 2), 0);
        assert_eq!(same_pad_before(8, 1, 2), 0);
    }
}
