//! Row-major JSON encodings for dynamic nalgebra types.
//!
//! nalgebra's own serde format is a flat column-major buffer plus shape,
//! which is awkward to read or hand-edit. These helpers use nested arrays
//! instead and are attached with `#[serde(with = "...")]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::scalar::Scalar;

fn to_rows<T: Scalar>(m: &DMatrix<T>) -> Vec<Vec<f64>> {
    m.row_iter()
        .map(|row| row.iter().map(|v| v.as_f64()).collect())
        .collect()
}

fn from_rows<T: Scalar, E: serde::de::Error>(rows: Vec<Vec<f64>>) -> Result<DMatrix<T>, E> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(E::custom("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| T::lit(rows[i][j])))
}

pub mod matrix {
    use super::*;

    pub fn serialize<T: Scalar, S: Serializer>(m: &DMatrix<T>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, T: Scalar, D: Deserializer<'de>>(d: D) -> Result<DMatrix<T>, D::Error> {
        from_rows(Vec::<Vec<f64>>::deserialize(d)?)
    }
}

pub mod vector {
    use super::*;

    pub fn serialize<T: Scalar, S: Serializer>(v: &DVector<T>, s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|x| x.as_f64())
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, T: Scalar, D: Deserializer<'de>>(d: D) -> Result<DVector<T>, D::Error> {
        let data = Vec::<f64>::deserialize(d)?;
        Ok(DVector::from_iterator(
            data.len(),
            data.into_iter().map(T::lit),
        ))
    }
}

pub mod matrix_seq {
    use super::*;

    pub fn serialize<T: Scalar, S: Serializer>(ms: &[DMatrix<T>], s: S) -> Result<S::Ok, S::Error> {
        ms.iter().map(to_rows).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, T: Scalar, D: Deserializer<'de>>(
        d: D,
    ) -> Result<Vec<DMatrix<T>>, D::Error> {
        Vec::<Vec<Vec<f64>>>::deserialize(d)?
            .into_iter()
            .map(from_rows)
            .collect()
    }
}

pub mod vector_seq {
    use super::*;

    pub fn serialize<T: Scalar, S: Serializer>(vs: &[DVector<T>], s: S) -> Result<S::Ok, S::Error> {
        vs.iter()
            .map(|v| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>())
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, T: Scalar, D: Deserializer<'de>>(
        d: D,
    ) -> Result<Vec<DVector<T>>, D::Error> {
        let data = Vec::<Vec<f64>>::deserialize(d)?;
        Ok(data
            .into_iter()
            .map(|v| DVector::from_iterator(v.len(), v.into_iter().map(T::lit)))
            .collect())
    }
}
