//! Shape-tagged flat tensors, the numeric substrate for everything else.
//!
//! Values are 64-bit reals in row-major order. There is no broadcasting
//! machinery here beyond what the tape ops implement explicitly
//! (scalar-tensor and row-wise bias addition); anything else is a loud
//! shape error.

use crate::error::{Error, Result};

/// A dense tensor: explicit shape plus a flat row-major value buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, checking that the buffer length matches the shape.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::InvalidShape {
                op: "Tensor::new",
                shape,
                msg: format!("shape wants {numel} values, got {}", values.len()),
            });
        }
        if shape.contains(&0) {
            // Zero extents are allowed only for empty 1-D tensors so that
            // concat with an empty operand stays well-defined.
            if shape.len() != 1 {
                return Err(Error::InvalidShape {
                    op: "Tensor::new",
                    shape,
                    msg: "zero extents are only allowed for 1-D tensors".into(),
                });
            }
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![v],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            values,
        }
    }

    /// Build a 2-D tensor from rows; all rows must have the same length.
    pub fn matrix(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            if row.len() != n_cols {
                return Err(Error::InvalidShape {
                    op: "Tensor::matrix",
                    shape: vec![n_rows, n_cols],
                    msg: format!("ragged row of length {}", row.len()),
                });
            }
            values.extend_from_slice(row);
        }
        Tensor::new(vec![n_rows, n_cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Number of rows / row width when viewed as a 2-D map. A 1-D tensor is
    /// treated as a single row.
    pub fn as_rows(&self) -> (usize, usize) {
        match self.shape.len() {
            0 | 1 => (1, self.numel()),
            _ => {
                let cols = *self.shape.last().unwrap();
                (self.numel() / cols.max(1), cols)
            }
        }
    }

    pub fn at2(&self, row: usize, col: usize) -> f64 {
        let (_, cols) = self.as_rows();
        self.values[row * cols + col]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Largest absolute element-wise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "max_abs_diff",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Raw 2-D matrix product used by the tape in both forward and backward
/// passes: `a` is m×k, `b` is k×n, result m×n.
pub fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aip * brow[j];
            }
        }
    }
    out
}
