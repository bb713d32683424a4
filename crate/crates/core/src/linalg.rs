//! Dense row-major matrices, sparse column gradients and softmax helpers.
//!
//! Model weights are held in `f64` but always lie on the `f32` grid: every write
//! path (initialization, SGD, parameter loading) rounds through `f32`, so
//! checkpoints and federated exchange are lossless.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::text_features::SparseFeatureVector;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("non-finite weight {bad}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Raw mutable access. Writes here bypass the `f32`-grid rounding.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }

    pub fn from_f32(rows: usize, cols: usize, values: &[f32]) -> Result<Self> {
        Self::from_vec(rows, cols, values.iter().map(|&v| f64::from(v)).collect())
    }

    /// `self · x` for a sparse `x` of dimension `cols`. Each output row sums
    /// over the entries of `x` in ascending index order.
    pub fn mul_sparse(&self, x: &SparseFeatureVector) -> Vec<f64> {
        assert_eq!(x.dim(), self.cols, "feature dimension mismatch");
        (0..self.rows)
            .map(|r| {
                let row = &self.data[r * self.cols..(r + 1) * self.cols];
                x.entries().iter().map(|&(j, c)| row[j] * c).sum()
            })
            .collect()
    }

    /// FNV-1a over the little-endian bytes of every weight.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.data.len() * 8 + 16);
        bytes.extend_from_slice(&(self.rows as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.cols as u64).to_le_bytes());
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        crate::text_features::hash64(&bytes)
    }
}

pub fn round_to_f32(v: f64) -> f64 {
    f64::from(v as f32)
}

/// Gradient of a `rows x cols` matrix that is non-zero only on a few columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseColumnGrad {
    rows: usize,
    cols: usize,
    columns: BTreeMap<usize, Vec<f64>>,
}

impl SparseColumnGrad {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            columns: BTreeMap::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn columns(&self) -> &BTreeMap<usize, Vec<f64>> {
        &self.columns
    }

    /// `grad += scale * outer(row_coeffs, x)`.
    pub fn add_outer(&mut self, row_coeffs: &[f64], x: &SparseFeatureVector, scale: f64) {
        debug_assert_eq!(row_coeffs.len(), self.rows);
        for &(j, c) in x.entries() {
            let column = self
                .columns
                .entry(j)
                .or_insert_with(|| vec![0.0; self.rows]);
            for (g, &a) in column.iter_mut().zip(row_coeffs) {
                *g += scale * a * c;
            }
        }
    }

    pub fn add_scaled(&mut self, other: &SparseColumnGrad, scale: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (&j, col) in &other.columns {
            let mine = self
                .columns
                .entry(j)
                .or_insert_with(|| vec![0.0; self.rows]);
            for (g, &o) in mine.iter_mut().zip(col) {
                *g += scale * o;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for col in self.columns.values_mut() {
            for g in col {
                *g *= factor;
            }
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.columns.get(&col).map_or(0.0, |c| c[row])
    }

    pub fn is_zero(&self) -> bool {
        self.columns.values().flatten().all(|&g| g == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.columns
            .values()
            .flatten()
            .fold(0.0, |m, &g| m.max(g.abs()))
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for (&j, col) in &self.columns {
            for (r, &g) in col.iter().enumerate() {
                m.set(r, j, g);
            }
        }
        m
    }

    /// `weights -= learning_rate * self`, rounding touched weights to the `f32` grid.
    pub fn apply_sgd(&self, weights: &mut Matrix, learning_rate: f64) {
        assert_eq!((self.rows, self.cols), (weights.rows, weights.cols));
        for (&j, col) in &self.columns {
            for (r, &g) in col.iter().enumerate() {
                let w = weights.get(r, j) - learning_rate * g;
                weights.set(r, j, round_to_f32(w));
            }
        }
    }
}

/// Inner product accumulated in `f64`, left to right.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inner product of an `f64` query against an `f32` embedding, left to right.
pub fn dot_f32(a: &[f64], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, &y)| x * f64::from(y)).sum()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|&x| x - lse).collect()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    log_softmax(xs).into_iter().map(f64::exp).collect()
}
