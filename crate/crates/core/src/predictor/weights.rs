//! Weight snapshot files.
//!
//! Layout: an 8-byte little-endian `u64` header length, a UTF-8 JSON header
//! `{"tensors":[{"name":..,"shape":[rows,cols]},..]}`, then every tensor's
//! values as little-endian `f64` in header order, each tensor row-major.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::nn::{ParamVisitor, ParamVisitorMut};
use super::ToyPredictor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    tensors: Vec<TensorHeader>,
}

/// Decoded snapshot: named row-major tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSnapshot {
    pub tensors: Vec<(String, DMatrix<f64>)>,
}

impl WeightSnapshot {
    pub fn from_model(model: &ToyPredictor) -> Self {
        struct Collect(Vec<(String, DMatrix<f64>)>);
        impl ParamVisitor for Collect {
            fn visit(&mut self, name: &str, t: &DMatrix<f64>) {
                self.0.push((name.to_string(), t.clone()));
            }
        }
        let mut c = Collect(Vec::new());
        model.visit_all(&mut c);
        Self { tensors: c.0 }
    }

    /// Copies tensors into a model with matching names and shapes.
    pub fn load_into(&self, model: &mut ToyPredictor) -> Result<()> {
        struct Load<'a> {
            source: std::slice::Iter<'a, (String, DMatrix<f64>)>,
            error: Option<Error>,
        }
        impl ParamVisitorMut for Load<'_> {
            fn visit(&mut self, name: &str, t: &mut DMatrix<f64>) {
                if self.error.is_some() {
                    return;
                }
                match self.source.next() {
                    Some((n, m)) if n == name && m.shape() == t.shape() => t.copy_from(m),
                    Some((n, m)) => {
                        self.error = Some(Error::ShapeMismatch(format!(
                            "snapshot tensor {n} {:?} does not match model tensor {name} {:?}",
                            m.shape(),
                            t.shape()
                        )))
                    }
                    None => self.error = Some(Error::ShapeMismatch(format!("snapshot is missing {name}"))),
                }
            }
        }
        let mut load = Load { source: self.tensors.iter(), error: None };
        model.visit_all_mut(&mut load);
        if let Some(e) = load.error {
            return Err(e);
        }
        if load.source.next().is_some() {
            return Err(Error::ShapeMismatch("snapshot has extra tensors".into()));
        }
        Ok(())
    }
}

pub fn write_snapshot(model: &ToyPredictor) -> Vec<u8> {
    let snapshot = WeightSnapshot::from_model(model);
    let header = Header {
        tensors: snapshot
            .tensors
            .iter()
            .map(|(name, t)| TensorHeader { name: name.clone(), shape: [t.nrows(), t.ncols()] })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + 8 * model.parameter_count());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &snapshot.tensors {
        for r in 0..t.nrows() {
            for c in 0..t.ncols() {
                out.extend_from_slice(&t[(r, c)].to_le_bytes());
            }
        }
    }
    out
}

pub fn read_snapshot(bytes: &[u8]) -> Result<WeightSnapshot> {
    let bad = |m: &str| Error::InvalidValue(format!("weight snapshot: {m}"));
    if bytes.len() < 8 {
        return Err(bad("truncated header length"));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body_start = 8usize.checked_add(header_len).filter(|e| *e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[8..body_start])?;
    let mut data = bytes[body_start..].chunks_exact(8);
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in header.tensors {
        let [rows, cols] = t.shape;
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let chunk = data.next().ok_or_else(|| bad("truncated tensor data"))?;
                m[(r, c)] = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
        }
        tensors.push((t.name, m));
    }
    if data.next().is_some() || !data.remainder().is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(WeightSnapshot { tensors })
}
