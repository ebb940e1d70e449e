//! Binary checkpoint format.
//!
//! ```text
//! magic            8 bytes   "DCMODEL\0"
//! version          u32       1
//! num_sizes        u64       L (input, hidden..., classes)
//! layer_sizes      L x u64
//! dropout_probs    (L-2) x f64
//! embedding_layer  u64       must equal L-2
//! per layer i in 0..L-1:
//!   rows           u64       must equal layer_sizes[i+1]
//!   cols           u64       must equal layer_sizes[i]
//!   weights        rows*cols x f64, row-major
//!   bias           rows x f64
//! ```
//! All integers and floats little-endian.

use std::path::Path;

use super::{Layer, MlpModel};
use crate::codec::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DCMODEL\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode(model: &MlpModel) -> Vec<u8> {
    let mut w = Writer::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
    w.u64(model.layer_sizes.len() as u64);
    for &s in &model.layer_sizes {
        w.u64(s as u64);
    }
    w.f64s(&model.dropout_probs);
    w.u64(model.embedding_layer() as u64);
    for l in &model.layers {
        w.u64(l.weights.rows() as u64);
        w.u64(l.weights.cols() as u64);
        w.f64s(l.weights.as_slice());
        w.f64s(&l.bias);
    }
    w.finish()
}

pub fn decode(bytes: &[u8]) -> Result<MlpModel> {
    let mut r = Reader::open(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let n = r.count("num_sizes")?;
    if n < 3 {
        return Err(Error::format(
            "num_sizes",
            format!("{n} layer sizes, need at least 3"),
        ));
    }
    let mut sizes = Vec::with_capacity(n);
    for i in 0..n {
        let s = r.count(&format!("layer_sizes[{i}]"))?;
        if s == 0 {
            return Err(Error::format(format!("layer_sizes[{i}]"), "zero width"));
        }
        sizes.push(s);
    }
    let dropout = r.f64s(n - 2, "dropout_probs")?;
    if let Some(p) = dropout.iter().find(|p| !(0.0..1.0).contains(*p)) {
        return Err(Error::format("dropout_probs", format!("{p} outside [0,1)")));
    }
    let emb = r.count("embedding_layer")?;
    if emb != n - 2 {
        return Err(Error::format(
            "embedding_layer",
            format!("{emb} is not the penultimate layer {}", n - 2),
        ));
    }
    let mut layers = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let rows = r.count(&format!("layer {i} rows"))?;
        let cols = r.count(&format!("layer {i} cols"))?;
        if rows != sizes[i + 1] || cols != sizes[i] {
            return Err(Error::format(
                format!("layer {i}"),
                format!(
                    "declared shape {rows}x{cols} but layer sizes imply {}x{}",
                    sizes[i + 1],
                    sizes[i]
                ),
            ));
        }
        let w = r.f64s(rows * cols, &format!("layer {i} weights"))?;
        let b = r.f64s(rows, &format!("layer {i} bias"))?;
        layers.push(Layer {
            weights: Matrix::new(rows, cols, w)
                .map_err(|e| Error::format(format!("layer {i}"), e.to_string()))?,
            bias: b,
        });
    }
    r.expect_end()?;
    Ok(MlpModel {
        layer_sizes: sizes,
        layers,
        dropout_probs: dropout,
    })
}

pub fn save_checkpoint(model: &MlpModel, path: &Path) -> Result<()> {
    write_file(path, &encode(model))
}

pub fn load_checkpoint(path: &Path) -> Result<MlpModel> {
    decode(&read_file(path)?)
}
