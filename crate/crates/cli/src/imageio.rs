//! Image input: PGM (P2/P5) and raw32.
//!
//! raw32 is three little-endian u32 (rows, cols, channels) followed by
//! `rows * cols * channels` little-endian f32 values, row-major.

use std::path::Path;

use rlpm_core::{Error, Tensor};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Pgm,
    Raw32,
}

impl ImageFormat {
    /// `.pgm` files are PGM, anything else raw32.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("pgm") => ImageFormat::Pgm,
            _ => ImageFormat::Raw32,
        }
    }
}

fn data_error(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {msg}", path.display()))
}

pub fn read_image(path: &Path, format: ImageFormat) -> Result<Tensor, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))?;
    match format {
        ImageFormat::Pgm => decode_pgm(&bytes).map_err(|m| data_error(path, m)),
        ImageFormat::Raw32 => decode_raw32(&bytes).map_err(|m| data_error(path, m)),
    }
}

/// Parses P2 or P5 into a `rows x cols x 1` tensor scaled to `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor, String> {
    let mut pos = 0;
    let mut header = Vec::with_capacity(4);
    while header.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PGM header".into());
        }
        header.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad PGM header field {s:?}"));
    let (cols, rows, maxval) = (num(&header[1])?, num(&header[2])?, num(&header[3])?);
    if cols == 0 || rows == 0 || maxval == 0 || maxval > 65535 {
        return Err(format!("bad PGM dimensions {cols}x{rows} maxval {maxval}"));
    }
    let n = rows * cols;
    let values: Vec<f64> = match header[0].as_str() {
        "P2" => {
            let text = String::from_utf8_lossy(&bytes[pos..]);
            let v: Vec<f64> = text
                .split_ascii_whitespace()
                .take(n)
                .map(|t| t.parse::<u32>().map(f64::from).map_err(|_| format!("bad PGM sample {t:?}")))
                .collect::<Result<_, _>>()?;
            v
        }
        "P5" => {
            let body = &bytes[(pos + 1).min(bytes.len())..];
            let width = if maxval < 256 { 1 } else { 2 };
            if body.len() < n * width {
                return Err(format!("PGM body has {} bytes, expected {}", body.len(), n * width));
            }
            body.chunks(width)
                .take(n)
                .map(|c| f64::from(if width == 1 { u16::from(c[0]) } else { u16::from_be_bytes([c[0], c[1]]) }))
                .collect()
        }
        m => return Err(format!("unsupported magic {m:?}")),
    };
    if values.len() != n {
        return Err(format!("PGM has {} samples, expected {n}", values.len()));
    }
    if values.iter().any(|&v| v > maxval as f64) {
        return Err("PGM sample exceeds maxval".into());
    }
    Tensor::new(vec![rows, cols, 1], values.iter().map(|v| v / maxval as f64).collect()).map_err(|e| e.to_string())
}

pub fn decode_raw32(bytes: &[u8]) -> Result<Tensor, String> {
    if bytes.len() < 12 {
        return Err("raw32 header needs 12 bytes".into());
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
    let shape = vec![dim(0), dim(1), dim(2)];
    let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("raw32 shape overflows")?;
    if n == 0 {
        return Err(format!("raw32 shape {shape:?} has a zero extent"));
    }
    if bytes.len() != 12 + 4 * n {
        return Err(format!("raw32 shaped {shape:?} needs {} bytes, file has {}", 12 + 4 * n, bytes.len()));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    Tensor::new(shape, data).map_err(|e| e.to_string())
}

pub fn encode_raw32(t: &Tensor) -> Vec<u8> {
    let (r, c, ch) = t.hwc().expect("raw32 images are rank 3");
    let mut out = Vec::with_capacity(12 + 4 * t.len());
    for d in [r, c, ch] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Fits an image to the model input, replicating a single channel across
/// all model channels.
pub fn conform(image: Tensor, model_shape: &[usize]) -> Result<Tensor, CliError> {
    if image.shape() == model_shape {
        return Ok(image);
    }
    let mismatch = || {
        CliError::Core(Error::Shape {
            layer: "input".into(),
            message: format!("image shaped {:?}, model expects {:?}", image.shape(), model_shape),
        })
    };
    match (image.hwc(), model_shape) {
        (Some((r, c, 1)), &[mr, mc, ch]) if r == mr && c == mc => {
            let data = image.data().iter().flat_map(|&v| std::iter::repeat_n(v, ch)).collect();
            Tensor::new(model_shape.to_vec(), data).map_err(CliError::Core)
        }
        _ => Err(mismatch()),
    }
}
