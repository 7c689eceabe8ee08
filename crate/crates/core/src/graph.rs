//! Validated network graphs.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::layer::{LayerKind, LayerSpec, INPUT_ID};
use crate::tensor::Tensor;

/// Where a layer reads one of its inputs from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Source {
    Input,
    Layer(usize),
}

/// A topologically ordered DAG of layers with loaded parameters.
///
/// Construction validates the whole graph: unique ids, inputs that precede
/// their consumers, a single output (the last layer), and end-to-end shape
/// inference. A constructed graph is immutable.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGraph {
    name: String,
    input_shape: Vec<usize>,
    output_classes: usize,
    layers: Vec<LayerSpec>,
    sources: Vec<Vec<Source>>,
    shapes: Vec<Vec<usize>>,
}

impl NetworkGraph {
    pub fn new(
        name: impl Into<String>,
        input_shape: Vec<usize>,
        output_classes: usize,
        layers: Vec<LayerSpec>,
    ) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Graph(format!("invalid input shape {input_shape:?}")));
        }
        if layers.is_empty() {
            return Err(Error::Graph("network has no layers".into()));
        }
        if output_classes == 0 {
            return Err(Error::Graph("output_classes must be positive".into()));
        }
        let sources = resolve_sources(&layers)?;

        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(layers.len());
        for (layer, srcs) in layers.iter().zip(&sources) {
            let ins: Vec<&[usize]> = srcs
                .iter()
                .map(|s| match *s {
                    Source::Input => input_shape.as_slice(),
                    Source::Layer(j) => shapes[j].as_slice(),
                })
                .collect();
            let out = layer.infer_shape(&ins)?;
            shapes.push(out);
        }

        let mut consumed = vec![false; layers.len()];
        for srcs in &sources {
            for s in srcs {
                if let Source::Layer(j) = s {
                    consumed[*j] = true;
                }
            }
        }
        if let Some(i) = consumed[..layers.len() - 1].iter().position(|c| !c) {
            return Err(Error::Graph(format!(
                "layer `{}` is a second output node; only the last layer may be unconsumed",
                layers[i].id
            )));
        }

        let last = shapes.last().expect("non-empty");
        if last.last() != Some(&output_classes) {
            return Err(Error::shape(
                &layers[layers.len() - 1].id,
                format!("output shape {last:?} does not end in {output_classes} classes"),
            ));
        }

        Ok(Self {
            name: name.into(),
            input_shape,
            output_classes,
            layers,
            sources,
            shapes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_classes(&self) -> usize {
        self.output_classes
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<LayerSpec> {
        self.layers
    }

    pub fn sources(&self, layer: usize) -> &[Source] {
        &self.sources[layer]
    }

    /// Inferred output shape of every layer, aligned with `layers()`.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty")
    }

    pub fn source_shape(&self, src: Source) -> &[usize] {
        match src {
            Source::Input => &self.input_shape,
            Source::Layer(j) => &self.shapes[j],
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// Index of the layer whose output holds the pre-softmax logits: the
    /// input of a terminal Softmax, or the last layer otherwise.
    pub fn logit_layer(&self) -> Option<usize> {
        let last = self.layers.len() - 1;
        if self.layers[last].kind == LayerKind::Softmax {
            match self.sources[last][0] {
                Source::Layer(j) => Some(j),
                Source::Input => None,
            }
        } else {
            Some(last)
        }
    }

    pub fn ends_in_softmax(&self) -> bool {
        self.layers.last().map(|l| &l.kind) == Some(&LayerKind::Softmax)
    }

    /// In-place parameter access for training; callers must keep shapes.
    pub(crate) fn layers_mut(&mut self) -> &mut [LayerSpec] {
        &mut self.layers
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Rebuilds the graph after replacing the parameters of each layer.
    /// Shapes must be unchanged.
    pub fn with_params(&self, params: Vec<(Option<Tensor>, Option<Tensor>)>) -> Result<Self> {
        let mut layers = self.layers.clone();
        for (layer, (w, b)) in layers.iter_mut().zip(params) {
            layer.weights = w;
            layer.bias = b;
        }
        NetworkGraph::new(self.name.clone(), self.input_shape.clone(), self.output_classes, layers)
    }
}

fn resolve_sources(layers: &[LayerSpec]) -> Result<Vec<Vec<Source>>> {
    let mut position: HashMap<&str, usize> = HashMap::new();
    for (i, layer) in layers.iter().enumerate() {
        if layer.id == INPUT_ID || layer.id.is_empty() {
            return Err(Error::Graph(format!("layer id `{}` is reserved", layer.id)));
        }
        if position.insert(layer.id.as_str(), i).is_some() {
            return Err(Error::Graph(format!("duplicate layer id `{}`", layer.id)));
        }
    }
    let mut sources = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let mut srcs = Vec::with_capacity(layer.inputs.len());
        for name in &layer.inputs {
            if name == INPUT_ID {
                srcs.push(Source::Input);
                continue;
            }
            match position.get(name.as_str()) {
                Some(&j) if j < i => srcs.push(Source::Layer(j)),
                Some(_) => {
                    let what = if has_cycle(layers, &position) {
                        "acyclicity violation: inputs form a cycle"
                    } else {
                        "ordering violation: input is defined after its consumer"
                    };
                    return Err(Error::Graph(format!(
                        "{what} (layer `{}` reads `{name}`)",
                        layer.id
                    )));
                }
                None => {
                    return Err(Error::Graph(format!(
                        "layer `{}` reads unknown layer `{name}`",
                        layer.id
                    )))
                }
            }
        }
        sources.push(srcs);
    }
    Ok(sources)
}

fn has_cycle(layers: &[LayerSpec], position: &HashMap<&str, usize>) -> bool {
    // 0 = unvisited, 1 = on stack, 2 = done
    fn visit(i: usize, layers: &[LayerSpec], pos: &HashMap<&str, usize>, state: &mut [u8]) -> bool {
        match state[i] {
            1 => return true,
            2 => return false,
            _ => {}
        }
        state[i] = 1;
        for name in &layers[i].inputs {
            if let Some(&j) = pos.get(name.as_str()) {
                if visit(j, layers, pos, state) {
                    return true;
                }
            }
        }
        state[i] = 2;
        false
    }
    let mut state = vec![0u8; layers.len()];
    (0..layers.len()).any(|i| visit(i, layers, position, &mut state))
}

/// Incremental builder for sequential graphs with occasional branches.
/// Each pushed layer reads the previous one unless told otherwise.
#[derive(Debug)]
pub struct GraphBuilder {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
}

impl GraphBuilder {
    pub fn new(name: impl Into<String>, input_shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            input_shape: input_shape.to_vec(),
            layers: Vec::new(),
        }
    }

    /// Id of the most recent layer (or the network input).
    pub fn last_id(&self) -> String {
        self.layers
            .last()
            .map_or_else(|| INPUT_ID.to_string(), |l| l.id.clone())
    }

    fn fresh_id(&self, kind: &LayerKind) -> String {
        format!("{}{}", kind.name().to_lowercase(), self.layers.len())
    }

    pub fn push(&mut self, kind: LayerKind, weights: Option<Tensor>, bias: Option<Tensor>) -> String {
        let id = self.fresh_id(&kind);
        let input = self.last_id();
        self.layers.push(LayerSpec {
            id: id.clone(),
            kind,
            weights,
            bias,
            inputs: vec![input],
        });
        id
    }

    pub fn push_layer(&mut self, layer: LayerSpec) -> String {
        let id = layer.id.clone();
        self.layers.push(layer);
        id
    }

    pub fn add(&mut self, a: &str, b: &str) -> String {
        let id = self.fresh_id(&LayerKind::Add);
        self.layers.push(LayerSpec::new(id.clone(), LayerKind::Add, vec![a.into(), b.into()]));
        id
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn build(self, output_classes: usize) -> Result<NetworkGraph> {
        NetworkGraph::new(self.name, self.input_shape, output_classes, self.layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::Padding;

    fn relu(id: &str, input: &str) -> LayerSpec {
        LayerSpec::new(id, LayerKind::ReLU, vec![input.into()])
    }

    #[test]
    fn detects_cycle() {
        let layers = vec![relu("a", "b"), relu("b", "a")];
        let err = NetworkGraph::new("c", vec![2], 2, layers).unwrap_err();
        assert!(err.to_string().contains("acyclicity"), "{err}");
    }

    #[test]
    fn detects_forward_reference_without_cycle() {
        let layers = vec![relu("a", "b"), relu("b", "input")];
        let err = NetworkGraph::new("c", vec![2], 2, layers).unwrap_err();
        assert!(err.to_string().contains("ordering"), "{err}");
    }

    #[test]
    fn rejects_dangling_layer() {
        let layers = vec![relu("a", "input"), relu("b", "input")];
        assert!(NetworkGraph::new("c", vec![2], 2, layers).is_err());
    }

    #[test]
    fn logit_layer_skips_softmax() {
        let mut b = GraphBuilder::new("n", &[4, 4, 1]);
        b.push(LayerKind::conv(2, 4, 1, Padding::Valid), Some(Tensor::zeros(&[4, 4, 1, 2])), None);
        b.push(LayerKind::Flatten, None, None);
        b.push(LayerKind::Softmax, None, None);
        let net = b.build(2).unwrap();
        assert_eq!(net.logit_layer(), Some(1));
        assert!(net.ends_in_softmax());
    }
}
