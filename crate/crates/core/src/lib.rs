//! From-scratch CNN inference with relevance-based explanations.
//!
//! A validated [`NetworkGraph`] runs single-example forward passes whose
//! recorded activations drive relevance propagation back to the input under
//! the LRP and Deep Taylor rules. Pixel-flipping evaluation and activation
//! maximisation build on that core, next to patch-to-whole-image conversion,
//! heatmap rendering and a bit-exact model container.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backward;
pub mod error;
pub mod forward;
pub mod graph;
pub mod layer;
pub mod model_io;
mod ops;
pub mod prototype;
pub mod relprop;
pub mod render;
pub mod resnet;
pub mod saliency;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod wholeimage;

pub use backward::{check_gradient, gradient, GradientCheck};
pub use error::{Error, Result};
pub use forward::{class_probabilities, forward, forward_with_trace, softmax, ActivationTrace, LayerRecord};
pub use graph::{GraphBuilder, NetworkGraph, Source};
pub use layer::{LayerKind, LayerSpec, Padding, INPUT_ID};
pub use relprop::{explain, gradient_times_input, DeepTaylorPreset, InputBounds, RelevanceMap, Rule, RuleConfig, Strategy};
pub use resnet::{build_resnet_block, BlockSpec};
pub use tensor::Tensor;
pub use train::{accuracy, train_toy, TrainReport};
