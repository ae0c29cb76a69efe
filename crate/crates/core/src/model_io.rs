//! JSON persistence for trained networks.
//!
//! Matrices are stored as dense row-major nested arrays. serde_json emits
//! the shortest representation that round-trips every f64 exactly, so a
//! save/load cycle reproduces predictions bit for bit.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, CoreResult};
use crate::reservoir::{EchoStateNetwork, HyperParams};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    schema_version: u64,
    hyper: HyperParams,
    seed: u64,
    washout: usize,
    w_res: Vec<Vec<f64>>,
    w_in: Vec<Vec<f64>>,
    bias: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    w_out: Option<Vec<Vec<f64>>>,
    input_channels: Vec<String>,
    output_channels: Vec<String>,
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], label: &str) -> CoreResult<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(CoreError::Parse(format!("{label}: empty matrix")));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(CoreError::Parse(format!("{label}: ragged rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn save_model(esn: &EchoStateNetwork, path: &Path) -> CoreResult<()> {
    let file = ModelFile {
        schema_version: SCHEMA_VERSION,
        hyper: *esn.hyper(),
        seed: esn.seed(),
        washout: esn.washout(),
        w_res: matrix_to_rows(esn.reservoir_matrix()),
        w_in: matrix_to_rows(esn.input_matrix()),
        bias: esn.bias().iter().cloned().collect(),
        w_out: esn.readout().map(matrix_to_rows),
        input_channels: esn.input_channels().to_vec(),
        output_channels: esn.output_channels().to_vec(),
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| CoreError::Parse(e.to_string()))?;
    fs::write(path, json)?;
    Ok(())
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1);
        }
        offset += l.len() + 1;
    }
    text.len()
}

pub fn load_model(path: &Path) -> CoreResult<EchoStateNetwork> {
    let text = fs::read_to_string(path)?;
    // Parse generically first so an unknown schema version is reported as
    // such rather than as a structural mismatch.
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
        CoreError::Parse(format!(
            "{}: {} at byte {}",
            path.display(),
            e,
            byte_offset(&text, e.line(), e.column())
        ))
    })?;
    let version = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| CoreError::Parse(format!("{}: missing schema_version", path.display())))?;
    if version != SCHEMA_VERSION {
        return Err(CoreError::SchemaVersion {
            found: version,
            expected: SCHEMA_VERSION,
        });
    }
    let file: ModelFile = serde_json::from_value(value)
        .map_err(|e| CoreError::Parse(format!("{}: {e}", path.display())))?;

    let w_res = rows_to_matrix(&file.w_res, "w_res")?;
    if w_res.nrows() != w_res.ncols() {
        return Err(CoreError::Parse("w_res must be square".into()));
    }
    let w_in = rows_to_matrix(&file.w_in, "w_in")?;
    if w_in.nrows() != w_res.nrows() {
        return Err(CoreError::Parse("w_in rows must match w_res".into()));
    }
    if file.bias.len() != w_res.nrows() {
        return Err(CoreError::Parse("bias length must match w_res".into()));
    }
    if file.input_channels.len() != w_in.ncols() {
        return Err(CoreError::Parse(
            "input channel names must match w_in".into(),
        ));
    }
    let w_out = match &file.w_out {
        Some(rows) => {
            let m = rows_to_matrix(rows, "w_out")?;
            if m.nrows() != w_res.nrows() {
                return Err(CoreError::Parse("w_out rows must match w_res".into()));
            }
            if m.ncols() != file.output_channels.len() {
                return Err(CoreError::Parse(
                    "output channel names must match w_out".into(),
                ));
            }
            Some(m)
        }
        None => None,
    };

    Ok(EchoStateNetwork {
        w_res,
        w_in,
        bias: DVector::from_vec(file.bias),
        hyper: file.hyper,
        w_out,
        seed: file.seed,
        washout: file.washout,
        input_channels: file.input_channels,
        output_channels: file.output_channels,
    })
}
