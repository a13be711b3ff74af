//! Dense row-major `f64` matrices.
//!
//! Vectors are stored as `1 × n` rows. No broadcasting: every binary operation
//! requires identical shapes, callers that need a broadcast express it as a
//! product with a ones vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "tensor data",
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Tensor {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn column_vector(data: Vec<f64>) -> Self {
        Tensor {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::row_vector(vec![value])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::dim(format!("row {i}"), cols, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Tensor {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Returns the scalar held by a `1 × 1` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on a non-scalar tensor");
        self.data[0]
    }

    pub fn reshaped(&self, rows: usize, cols: usize) -> Result<Self> {
        Tensor::from_vec(rows, cols, self.data.clone())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self · other`, or `self · otherᵀ` when `transpose_other` is set.
    pub fn matmul(&self, other: &Tensor, transpose_other: bool) -> Result<Self> {
        let (k_other, n) = if transpose_other {
            (other.cols, other.rows)
        } else {
            (other.rows, other.cols)
        };
        if self.cols != k_other {
            return Err(Error::dim(
                "matmul inner dimension",
                self.cols,
                format!("{k_other} (right operand {}x{})", other.rows, other.cols),
            ));
        }
        let m = self.rows;
        let k = self.cols;
        let mut out = Tensor::zeros(m, n);
        if transpose_other {
            for i in 0..m {
                let a = &self.data[i * k..(i + 1) * k];
                for j in 0..n {
                    let b = &other.data[j * k..(j + 1) * k];
                    out.data[i * n + j] = dot(a, b);
                }
            }
        } else {
            for i in 0..m {
                let out_row = &mut out.data[i * n..(i + 1) * n];
                for p in 0..k {
                    let a = self.data[i * k + p];
                    if a == 0.0 {
                        continue;
                    }
                    let b = &other.data[p * n..(p + 1) * n];
                    for (o, &bv) in out_row.iter_mut().zip(b) {
                        *o += a * bv;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_shape(other.shape(), "elementwise operand")?;
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn expect_shape(&self, shape: (usize, usize), what: &str) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::dim(
                what,
                format!("{}x{}", shape.0, shape.1),
                format!("{}x{}", self.rows, self.cols),
            ));
        }
        Ok(())
    }
}

/// Solves `A X = B` for square `A` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = a.rows;
    if a.cols != n {
        return Err(Error::dim("solve: square matrix", format!("{n}x{n}"), format!("{}x{}", a.rows, a.cols)));
    }
    if b.rows != n {
        return Err(Error::dim("solve: right-hand side rows", n, b.rows));
    }
    let m = b.cols;
    let mut a = a.clone();
    let mut x = b.clone();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a.get(i, col).abs().total_cmp(&a.get(j, col).abs()))
            .unwrap();
        let scale = a.get(pivot, col);
        if scale.abs() < 1e-300 {
            return Err(Error::Degenerate("singular matrix in solve".into()));
        }
        if pivot != col {
            for c in 0..n {
                let t = a.get(col, c);
                a.set(col, c, a.get(pivot, c));
                a.set(pivot, c, t);
            }
            for c in 0..m {
                let t = x.get(col, c);
                x.set(col, c, x.get(pivot, c));
                x.set(pivot, c, t);
            }
        }
        for r in col + 1..n {
            let f = a.get(r, col) / a.get(col, col);
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a.set(r, c, a.get(r, c) - f * a.get(col, c));
            }
            for c in 0..m {
                x.set(r, c, x.get(r, c) - f * x.get(col, c));
            }
        }
    }
    for col in (0..n).rev() {
        for c in 0..m {
            let mut v = x.get(col, c);
            for k in col + 1..n {
                v -= a.get(col, k) * x.get(k, c);
            }
            x.set(col, c, v / a.get(col, col));
        }
    }
    Ok(x)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_hand_product() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let ab = a.matmul(&b, false).unwrap();
        assert_eq!(ab.data, vec![19.0, 22.0, 43.0, 50.0]);
        let abt = a.matmul(&b, true).unwrap();
        assert_eq!(abt.data, vec![17.0, 23.0, 39.0, 53.0]);
        assert_eq!(abt, a.matmul(&b.transpose(), false).unwrap());
    }

    #[test]
    fn solve_recovers_known_solution() {
        let a = Tensor::from_rows(&[vec![0.0, 2.0, 1.0], vec![1.0, 1.0, 0.0], vec![3.0, 0.0, 1.0]]).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, -1.0], vec![2.0, 0.5], vec![-3.0, 4.0]]).unwrap();
        let b = a.matmul(&x, false).unwrap();
        assert!(solve(&a, &b).unwrap().max_abs_diff(&x) < 1e-12);
        assert!(solve(&Tensor::zeros(2, 2), &Tensor::zeros(2, 1)).is_err());
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(2, 3);
        assert!(a.matmul(&b, false).is_err());
        assert!(a.add(&Tensor::zeros(3, 2)).is_err());
        assert!(Tensor::from_vec(2, 2, vec![0.0; 3]).is_err());
    }
}
