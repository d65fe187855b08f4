//! Dense row-major 2-D tensors.
//!
//! Every value in the graph is a matrix; scalars are `1×1` and vectors are
//! either a single row or a single column. Elementwise binary operations
//! broadcast any dimension of size 1 against the other operand.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "shape [{rows}, {cols}] needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::filled(1, 1, value)
    }

    pub fn row(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a tensor by evaluating `f(row, col)` for every element.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    /// Value of a `1×1` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Shape(format!(
                "expected a scalar, got shape {:?}",
                self.shape()
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn transpose(&self) -> Self {
        let mut out = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                out.push(self.data[r * self.cols + c]);
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let (n, m, p) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * p];
        for i in 0..n {
            let out_row = &mut out[i * p..(i + 1) * p];
            for k in 0..m {
                let a = self.data[i * m + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * p..(k + 1) * p];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Self {
            rows: n,
            cols: p,
            data: out,
        })
    }

    /// Elementwise combination with size-1 broadcasting in either operand.
    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape() == other.shape() {
            return Ok(Self {
                rows: self.rows,
                cols: self.cols,
                data: self
                    .data
                    .iter()
                    .zip(&other.data)
                    .map(|(&a, &b)| f(a, b))
                    .collect(),
            });
        }
        let [rows, cols] = broadcast_shape(self.shape(), other.shape())?;
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let ra = if self.rows == 1 { 0 } else { r };
            let rb = if other.rows == 1 { 0 } else { r };
            for c in 0..cols {
                let ca = if self.cols == 1 { 0 } else { c };
                let cb = if other.cols == 1 { 0 } else { c };
                data.push(f(
                    self.data[ra * self.cols + ca],
                    other.data[rb * other.cols + cb],
                ));
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    /// In-place `self += other` for equal shapes.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "accumulate {:?} += {:?}",
                self.shape(),
                other.shape()
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Column sums as a `1×cols` row.
    pub fn sum_rows(&self) -> Self {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(&self.data[r * self.cols..(r + 1) * self.cols]) {
                *o += v;
            }
        }
        Self {
            rows: 1,
            cols: self.cols,
            data: out,
        }
    }

    /// Row sums as a `rows×1` column.
    pub fn sum_cols(&self) -> Self {
        let data = (0..self.rows)
            .map(|r| self.data[r * self.cols..(r + 1) * self.cols].iter().sum())
            .collect();
        Self {
            rows: self.rows,
            cols: 1,
            data,
        }
    }

    /// Sums broadcast dimensions away so the result has `target` shape.
    pub fn reduce_to(&self, target: [usize; 2]) -> Result<Self> {
        if self.shape() == target {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        if target[0] == 1 && out.rows != 1 {
            out = out.sum_rows();
        }
        if target[1] == 1 && out.cols != 1 {
            out = out.sum_cols();
        }
        if out.shape() != target {
            return Err(Error::Shape(format!(
                "cannot reduce {:?} to {:?}",
                self.shape(),
                target
            )));
        }
        Ok(out)
    }

    /// Expands a broadcastable tensor to `target` shape.
    pub fn broadcast_to(&self, target: [usize; 2]) -> Result<Self> {
        Self::zeros(target[0], target[1]).add(self)
    }

    pub fn select_cols(&self, start: usize, end: usize) -> Self {
        let width = end - start;
        let mut data = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            data.extend_from_slice(&self.data[r * self.cols + start..r * self.cols + end]);
        }
        Self {
            rows: self.rows,
            cols: width,
            data,
        }
    }

    pub fn select_rows(&self, start: usize, end: usize) -> Self {
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn concat_cols(parts: &[&Self]) -> Result<Self> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if parts.iter().any(|p| p.rows != rows) {
            return Err(Error::Shape("column concat needs equal row counts".into()));
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(&p.data[r * p.cols..(r + 1) * p.cols]);
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn concat_rows(parts: &[&Self]) -> Result<Self> {
        let cols = parts.first().map_or(0, |p| p.cols);
        if parts.iter().any(|p| p.cols != cols) {
            return Err(Error::Shape("row concat needs equal column counts".into()));
        }
        let rows = parts.iter().map(|p| p.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Result shape of broadcasting `a` against `b`.
pub fn broadcast_shape(a: [usize; 2], b: [usize; 2]) -> Result<[usize; 2]> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a[0], b[0]), dim(a[1], b[1])) {
        (Some(r), Some(c)) => Ok([r, c]),
        _ => Err(Error::Shape(format!("cannot broadcast {a:?} with {b:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(DenseTensor::new(2, 2, vec![1.0; 3]).is_err());
        assert!(DenseTensor::new(2, 2, vec![1.0; 4]).is_ok());
    }

    #[test]
    fn matmul_identity() {
        let v = DenseTensor::column(&[1.0, 2.0]);
        let out = DenseTensor::identity(2).matmul(&v).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);
    }

    #[test]
    fn broadcasting_rows_and_columns() {
        let m = DenseTensor::new(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let r = DenseTensor::row(&[10., 20., 30.]);
        let c = DenseTensor::column(&[100., 200.]);
        assert_eq!(m.add(&r).unwrap().data(), &[11., 22., 33., 14., 25., 36.]);
        assert_eq!(c.add(&m).unwrap().data(), &[101., 102., 103., 204., 205., 206.]);
        assert_eq!(
            m.add(&r).unwrap().reduce_to([1, 3]).unwrap().data(),
            &[25., 47., 69.]
        );
        assert!(m.add(&DenseTensor::row(&[1., 2.])).is_err());
    }

    #[test]
    fn select_and_concat_invert() {
        let m = DenseTensor::new(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let a = m.select_cols(0, 1);
        let b = m.select_cols(1, 3);
        assert_eq!(DenseTensor::concat_cols(&[&a, &b]).unwrap(), m);
        let top = m.select_rows(0, 1);
        let bottom = m.select_rows(1, 2);
        assert_eq!(DenseTensor::concat_rows(&[&top, &bottom]).unwrap(), m);
    }
}
