//! Small dense matrices for model coefficients.
//!
//! State dimensions here are tiny (usually 1), so everything is a plain
//! row-major `Vec<f64>` and eigenvalues come from cyclic Jacobi sweeps.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Matrix {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from rows; returns `None` for ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return None;
        }
        Some(Matrix {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).map(<[f64]>::to_vec).collect()
    }

    /// `out += self * v`.
    #[inline]
    pub fn mul_add_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Spectral norm, i.e. the Lipschitz constant of `v -> A v` in the
    /// Euclidean norm.
    pub fn operator_norm(&self) -> f64 {
        if self.rows == 1 || self.cols == 1 {
            return self.frobenius_norm();
        }
        let gram = self.transpose().matmul(self);
        symmetric_eigenvalues(&gram)
            .into_iter()
            .fold(0.0_f64, f64::max)
            .max(0.0)
            .sqrt()
    }
}

/// Eigenvalues of a symmetric matrix (cyclic Jacobi), unsorted.
pub fn symmetric_eigenvalues(m: &Matrix) -> Vec<f64> {
    assert_eq!(m.rows, m.cols, "eigenvalues need a square matrix");
    let n = m.rows;
    if n == 1 {
        return vec![m.data[0]];
    }
    let mut a = m.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j).powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    (0..n).map(|i| a.get(i, i)).collect()
}

impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Scalar(f64),
            Rows(Vec<Vec<f64>>),
        }
        match Repr::deserialize(d)? {
            Repr::Scalar(v) => Ok(Matrix::scalar(v)),
            Repr::Rows(rows) => Matrix::from_rows(&rows)
                .ok_or_else(|| serde::de::Error::custom("ragged matrix rows")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_matches_closed_form_2x2() {
        let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let mut ev = symmetric_eigenvalues(&m);
        ev.sort_by(f64::total_cmp);
        let disc = (1.0_f64 + 4.0).sqrt();
        assert!((ev[0] - (5.0 - disc) / 2.0).abs() < 1e-12);
        assert!((ev[1] - (5.0 + disc) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn operator_norm_of_rotation_is_one() {
        let (s, c) = 0.3_f64.sin_cos();
        let r = Matrix::from_rows(&[vec![c, -s], vec![s, c]]).unwrap();
        assert!((r.operator_norm() - 1.0).abs() < 1e-12);
        assert_eq!(Matrix::scalar(-1.5).operator_norm(), 1.5);
    }

    #[test]
    fn scalar_and_rows_deserialize() {
        let m: Matrix = serde_json::from_str("-2.0").unwrap();
        assert_eq!(m, Matrix::scalar(-2.0));
        let m: Matrix = serde_json::from_str("[[1.0, 0.0], [0.0, 1.0]]").unwrap();
        assert_eq!(m, Matrix::identity(2));
        assert!(serde_json::from_str::<Matrix>("[[1.0], [0.0, 1.0]]").is_err());
    }
}
