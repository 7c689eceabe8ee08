//! The RLPM1 model container: a canonical JSON manifest (`<path>.json`)
//! next to a blob of little-endian `f32` parameters (`<path>.bin`).
//!
//! Layers store their weights then their bias, concatenated in layer order.
//! Every span is 4-byte aligned, spans never overlap, and the manifest
//! carries the CRC32 (IEEE) of the blob. The manifest is written with
//! sorted keys and no insignificant whitespace, so save/load/save is
//! byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::graph::NetworkGraph;
use crate::layer::{LayerKind, LayerSpec};
use crate::resnet::shortcut_kinds;
use crate::tensor::Tensor;

pub const MAGIC: &str = "RLPM1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub magic: String,
    pub name: String,
    pub input_shape: Vec<usize>,
    pub output_classes: usize,
    pub layers: Vec<ManifestLayer>,
    pub blob_len: u64,
    pub blob_checksum: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestLayer {
    pub id: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    pub inputs: Vec<String>,
    pub weight_offset: u64,
    pub weight_len: u64,
    pub weight_shape: Option<Vec<usize>>,
    pub bias_offset: u64,
    pub bias_len: u64,
    pub bias_shape: Option<Vec<usize>>,
}

/// `<path>.json` and `<path>.bin`; a trailing `.json` or `.bin` on `path`
/// is ignored so either file can be named.
pub fn model_paths(path: &Path) -> (PathBuf, PathBuf) {
    let base = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut json = base.clone().into_os_string();
    json.push(".json");
    let mut bin = base.into_os_string();
    bin.push(".bin");
    (json.into(), bin.into())
}

/// Serialises `net` to `(manifest text, blob bytes)`.
pub fn encode(net: &NetworkGraph) -> (String, Vec<u8>) {
    let mut blob = Vec::new();
    let mut layers = Vec::with_capacity(net.layers().len());
    let put = |blob: &mut Vec<u8>, t: Option<&Tensor>| match t {
        Some(t) => {
            let offset = blob.len() as u64;
            for v in t.data() {
                blob.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            (offset, (t.len() * 4) as u64, Some(t.shape().to_vec()))
        }
        None => (0, 0, None),
    };
    for layer in net.layers() {
        let (weight_offset, weight_len, weight_shape) = put(&mut blob, layer.weights.as_ref());
        let (bias_offset, bias_len, bias_shape) = put(&mut blob, layer.bias.as_ref());
        layers.push(ManifestLayer {
            id: layer.id.clone(),
            kind: layer.kind.clone(),
            inputs: layer.inputs.clone(),
            weight_offset,
            weight_len,
            weight_shape,
            bias_offset,
            bias_len,
            bias_shape,
        });
    }
    let manifest = ModelManifest {
        magic: MAGIC.to_string(),
        name: net.name().to_string(),
        input_shape: net.input_shape().to_vec(),
        output_classes: net.output_classes(),
        layers,
        blob_len: blob.len() as u64,
        blob_checksum: crc32fast::hash(&blob),
    };
    let value = serde_json::to_value(&manifest).expect("manifest is always representable");
    let mut text = String::new();
    write_canonical(&value, &mut text);
    (text, blob)
}

/// JSON with object keys sorted and no whitespace.
fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(v, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

/// Parses and fully validates a manifest/blob pair.
pub fn decode(manifest_text: &str, blob: &[u8]) -> Result<NetworkGraph> {
    let manifest: ModelManifest = serde_json::from_str(manifest_text)
        .map_err(|e| Error::Format(format!("unreadable manifest: {e}")))?;
    if manifest.magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic `{}`, expected `{MAGIC}`",
            manifest.magic
        )));
    }
    check_spans(&manifest)?;
    if blob.len() as u64 != manifest.blob_len {
        return Err(Error::Corruption(format!(
            "blob holds {} bytes, manifest declares {}",
            blob.len(),
            manifest.blob_len
        )));
    }
    let crc = crc32fast::hash(blob);
    if crc != manifest.blob_checksum {
        return Err(Error::Corruption(format!(
            "blob checksum {crc:08x} does not match manifest {:08x}",
            manifest.blob_checksum
        )));
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for entry in &manifest.layers {
        let read = |offset: u64, len: u64, shape: &Option<Vec<usize>>| -> Result<Option<Tensor>> {
            let Some(shape) = shape else { return Ok(None) };
            let bytes = &blob[offset as usize..(offset + len) as usize];
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            Tensor::new(shape.clone(), data)
                .map(Some)
                .map_err(|e| Error::shape(&entry.id, e.to_string()))
        };
        let weights = read(entry.weight_offset, entry.weight_len, &entry.weight_shape)?;
        let bias = read(entry.bias_offset, entry.bias_len, &entry.bias_shape)?;
        if weights.iter().chain(&bias).any(|t| !t.is_finite()) {
            return Err(Error::Corruption(format!(
                "layer `{}` holds non-finite parameters",
                entry.id
            )));
        }
        layers.push(LayerSpec {
            id: entry.id.clone(),
            kind: entry.kind.clone(),
            weights,
            bias,
            inputs: entry.inputs.clone(),
        });
    }
    NetworkGraph::new(
        manifest.name,
        manifest.input_shape,
        manifest.output_classes,
        layers,
    )
}

fn check_spans(manifest: &ModelManifest) -> Result<()> {
    let mut spans: Vec<(u64, u64, &str)> = Vec::new();
    for entry in &manifest.layers {
        for (offset, len, shape) in [
            (entry.weight_offset, entry.weight_len, &entry.weight_shape),
            (entry.bias_offset, entry.bias_len, &entry.bias_shape),
        ] {
            match shape {
                None if len != 0 => {
                    return Err(Error::Format(format!(
                        "layer `{}` declares {len} bytes without a shape",
                        entry.id
                    )))
                }
                None => continue,
                Some(shape) => {
                    let count = shape.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
                    if count.and_then(|c| c.checked_mul(4)) != Some(len) || shape.contains(&0) {
                        return Err(Error::shape(
                            &entry.id,
                            format!("shape {shape:?} does not match span of {len} bytes"),
                        ));
                    }
                }
            }
            if offset % 4 != 0 || len % 4 != 0 {
                return Err(Error::Format(format!(
                    "layer `{}` span at {offset}+{len} is not 4-byte aligned",
                    entry.id
                )));
            }
            let end = offset.checked_add(len).filter(|&e| e <= manifest.blob_len).ok_or_else(|| {
                Error::Format(format!(
                    "layer `{}` span at {offset}+{len} exceeds blob length {}",
                    entry.id, manifest.blob_len
                ))
            })?;
            spans.push((offset, end, &entry.id));
        }
    }
    spans.sort();
    for pair in spans.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(Error::Format(format!(
                "spans of layers `{}` and `{}` overlap",
                pair[0].2, pair[1].2
            )));
        }
    }
    Ok(())
}

pub fn save(net: &NetworkGraph, path: impl AsRef<Path>) -> Result<()> {
    let (json_path, bin_path) = model_paths(path.as_ref());
    let (manifest, blob) = encode(net);
    fs::write(&bin_path, &blob).map_err(|e| Error::io(&bin_path, e))?;
    fs::write(&json_path, manifest.as_bytes()).map_err(|e| Error::io(&json_path, e))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<NetworkGraph> {
    let (json_path, bin_path) = model_paths(path.as_ref());
    let manifest = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let blob = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    decode(&manifest, &blob)
}

/// Result of `validate`: a printable report plus the verdict.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub valid: bool,
    pub text: String,
    pub error: Option<String>,
}

/// Loads the model at `path` and describes it: layer table, parameter
/// counts, shape trace and residual units. Failures are reported, not
/// returned.
pub fn validate(path: impl AsRef<Path>) -> ValidationReport {
    match load(path) {
        Ok(net) => ValidationReport {
            valid: true,
            text: describe(&net),
            error: None,
        },
        Err(e) => ValidationReport {
            valid: false,
            text: format!("INVALID: {e}\n"),
            error: Some(e.to_string()),
        },
    }
}

pub fn describe(net: &NetworkGraph) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "model: {}", net.name());
    let _ = writeln!(s, "input_shape: {:?}", net.input_shape());
    let _ = writeln!(s, "output_classes: {}", net.output_classes());
    let _ = writeln!(s, "layers: {}", net.layers().len());
    let _ = writeln!(s, "{:>4}  {:<20} {:<16} {:<28} {:<16} {:>10}", "#", "id", "kind", "inputs", "output", "params");
    for (i, (layer, shape)) in net.layers().iter().zip(net.shapes()).enumerate() {
        let _ = writeln!(
            s,
            "{:>4}  {:<20} {:<16} {:<28} {:<16} {:>10}",
            i,
            layer.id,
            layer.kind.name(),
            layer.inputs.join(","),
            format!("{shape:?}"),
            layer.param_count()
        );
    }
    let _ = writeln!(s, "parameters: {}", net.param_count());
    let shortcuts = shortcut_kinds(net.layers());
    let _ = writeln!(s, "residual units: {}", shortcuts.len());
    for (id, kind) in shortcuts {
        let _ = writeln!(s, "  {id}: {kind:?} shortcut");
    }
    let _ = writeln!(s, "OK");
    s
}
