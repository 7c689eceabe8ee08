//! Heatmap and prototype images as binary PPM/PGM.
//!
//! Positive relevance ramps from white to purple, negative from white to
//! blue; zero stays white.

use std::path::Path;

use crate::error::{Error, Result};
use crate::relprop::RelevanceMap;
use crate::tensor::Tensor;

pub const PURPLE: [u8; 3] = [160, 32, 240];
pub const BLUE: [u8; 3] = [0, 0, 255];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorScale {
    pub positive: [u8; 3],
    pub negative: [u8; 3],
    /// Applied to `|v|` before interpolation.
    pub gamma: f64,
}

impl Default for ColorScale {
    fn default() -> Self {
        Self {
            positive: PURPLE,
            negative: BLUE,
            gamma: 1.0,
        }
    }
}

impl ColorScale {
    pub fn with_gamma(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Input(format!("gamma must be > 0, got {gamma}")));
        }
        Ok(Self {
            gamma,
            ..Self::default()
        })
    }

    /// Colour of a value in `[-1, 1]`.
    pub fn color(&self, v: f64) -> [u8; 3] {
        let t = v.abs().min(1.0).powf(self.gamma);
        let end = if v >= 0.0 { self.positive } else { self.negative };
        end.map(|e| (255.0 + t * (f64::from(e) - 255.0)).round() as u8)
    }
}

/// Scales `t` by its largest magnitude into `[-1, 1]`; all-zero stays zero.
pub fn normalize(t: &Tensor) -> Tensor {
    let m = t.max_abs();
    if m == 0.0 {
        t.clone()
    } else {
        t.map(|v| v / m)
    }
}

pub fn normalize_relevance(map: &RelevanceMap) -> Tensor {
    normalize(&map.values)
}

/// Sums the channel axis of a rank-3 tensor; other ranks pass through.
pub fn channel_sum(t: &Tensor) -> Tensor {
    match t.hwc() {
        Some((r, c, ch)) => {
            let data = t.data().chunks(ch).map(|px| px.iter().sum()).collect();
            Tensor::new(vec![r, c], data).expect("non-empty")
        }
        None => t.clone(),
    }
}

/// `(rows, cols)` and one value per pixel, channels averaged.
fn plane(t: &Tensor) -> Result<(usize, usize, Vec<f64>)> {
    let (rows, cols, values) = match *t.shape() {
        [n] => (1, n, t.data().to_vec()),
        [r, c] => (r, c, t.data().to_vec()),
        [r, c, ch] => (
            r,
            c,
            t.data()
                .chunks(ch)
                .map(|px| px.iter().sum::<f64>() / ch as f64)
                .collect(),
        ),
        _ => return Err(Error::Input(format!("cannot render a tensor shaped {:?}", t.shape()))),
    };
    if values.iter().any(|v| !(-1.0..=1.0).contains(v)) {
        return Err(Error::Input("image values must lie in [-1, 1]".into()));
    }
    Ok((rows, cols, values))
}

/// Binary PPM (P6, maxval 255) of a normalised map.
pub fn encode_ppm(normalized: &Tensor, scale: &ColorScale) -> Result<Vec<u8>> {
    let (rows, cols, values) = plane(normalized)?;
    let mut out = format!("P6\n{cols} {rows}\n255\n").into_bytes();
    for v in values {
        out.extend_from_slice(&scale.color(v));
    }
    Ok(out)
}

/// Binary PGM (P5, maxval 255): -1 black, 0 mid grey, +1 white.
pub fn encode_pgm(normalized: &Tensor) -> Result<Vec<u8>> {
    let (rows, cols, values) = plane(normalized)?;
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| ((v + 1.0) * 127.5).round() as u8));
    Ok(out)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn to_image(normalized: &Tensor, scale: &ColorScale, path: &Path) -> Result<()> {
    write(path, &encode_ppm(normalized, scale)?)
}

pub fn to_grayscale(normalized: &Tensor, path: &Path) -> Result<()> {
    write(path, &encode_pgm(normalized)?)
}
