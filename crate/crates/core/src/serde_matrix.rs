//! Matrices as JSON arrays of row arrays.

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::linalg::{from_rows, to_rows};

pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    to_rows(m).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    let rows = Vec::<Vec<f64>>::deserialize(d)?;
    parse_rows(&rows).map_err(D::Error::custom)
}

/// Rows must be nonempty and of equal length.
pub fn parse_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err("matrix must have at least one row and one column".into());
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(format!("row {} has {} entries, expected {cols}", i + 1, r.len()));
    }
    from_rows(rows, cols).ok_or_else(|| "ragged matrix".to_string())
}
