//! Relevance map interchange: CSV with header `row,col,channel,value`.

use std::path::Path;

use rlpm_core::Tensor;

use crate::CliError;

pub const HEADER: [&str; 4] = ["row", "col", "channel", "value"];

/// Rows in row-major order, values in shortest round-trip form.
pub fn write_map(values: &Tensor) -> Result<Vec<u8>, CliError> {
    let (rows, cols, ch) = values
        .hwc()
        .ok_or_else(|| CliError::Data(format!("relevance maps must be rank 3, got {:?}", values.shape())))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(HEADER).map_err(csv_err)?;
    for r in 0..rows {
        for c in 0..cols {
            for k in 0..ch {
                let v = values[(r * cols + c) * ch + k];
                w.write_record([r.to_string(), c.to_string(), k.to_string(), v.to_string()])
                    .map_err(csv_err)?;
            }
        }
    }
    w.into_inner().map_err(|e| CliError::Data(e.to_string()))
}

/// Reads a map that must cover every cell of `shape` exactly once, in any
/// order.
pub fn read_map(path: &Path, shape: &[usize]) -> Result<Tensor, CliError> {
    let bad = |msg: String| CliError::Data(format!("{}: {msg}", path.display()));
    let &[rows, cols, ch] = shape else {
        return Err(bad(format!("maps need a rank-3 shape, got {shape:?}")));
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(bad(format!("expected header {}", HEADER.join(","))));
    }
    let n = rows * cols * ch;
    let mut data = vec![f64::NAN; n];
    let mut seen = vec![false; n];
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let index = |i: usize, limit: usize| -> Result<usize, CliError> {
            field(i)
                .parse::<usize>()
                .ok()
                .filter(|&v| v < limit)
                .ok_or_else(|| bad(format!("row {}: {} {:?} out of range", line + 2, HEADER[i], field(i))))
        };
        let (r, c, k) = (index(0, rows)?, index(1, cols)?, index(2, ch)?);
        let v: f64 = field(3)
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| bad(format!("row {}: bad value {:?}", line + 2, field(3))))?;
        let at = (r * cols + c) * ch + k;
        if seen[at] {
            return Err(bad(format!("cell ({r},{c},{k}) listed twice")));
        }
        seen[at] = true;
        data[at] = v;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(bad(format!("map has no value for flat index {missing}")));
    }
    Tensor::new(shape.to_vec(), data).map_err(CliError::Core)
}
