//! Row-major `{rows, cols, data}` encoding for `DMatrix<f64>`.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
struct Dense {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    to_dense(m).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    let dense = Dense::deserialize(d)?;
    if dense.data.len() != dense.rows * dense.cols {
        return Err(serde::de::Error::custom(format!(
            "matrix {}x{} has {} entries",
            dense.rows,
            dense.cols,
            dense.data.len()
        )));
    }
    Ok(DMatrix::from_row_slice(dense.rows, dense.cols, &dense.data))
}

fn to_dense(m: &DMatrix<f64>) -> Dense {
    Dense {
        rows: m.nrows(),
        cols: m.ncols(),
        data: (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect(),
    }
}

/// The same encoding for a list of matrices.
pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        ms.iter().map(to_dense).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        let dense = Vec::<Dense>::deserialize(d)?;
        dense
            .into_iter()
            .map(|m| {
                if m.data.len() != m.rows * m.cols {
                    return Err(serde::de::Error::custom(format!("matrix {}x{} has {} entries", m.rows, m.cols, m.data.len())));
                }
                Ok(DMatrix::from_row_slice(m.rows, m.cols, &m.data))
            })
            .collect()
    }
}
