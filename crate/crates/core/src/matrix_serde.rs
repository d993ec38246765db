//! Row-major nested-array (de)serialization for dense matrices.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::linalg::Matrix;

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows<E: serde::de::Error>(rows: Vec<Vec<f64>>) -> Result<Matrix, E> {
    let r = rows.len();
    if r == 0 {
        return Err(E::custom("matrix must have at least one row"));
    }
    let c = rows[0].len();
    if c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(E::custom("matrix rows must be non-empty and of equal length"));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
    to_rows(m).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
    let rows = Vec::<Vec<f64>>::deserialize(d)?;
    from_rows(rows)
}

pub mod option {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Option<Matrix>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(to_rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Matrix>, D::Error> {
        match Option::<Vec<Vec<f64>>>::deserialize(d)? {
            None => Ok(None),
            Some(rows) => from_rows(rows).map(Some),
        }
    }
}
