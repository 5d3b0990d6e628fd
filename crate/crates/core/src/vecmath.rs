//! Dense vector/matrix helpers shared by the models, engine, and oracle.
//!
//! Everything is `f64` and row-major. Sums that feed cross-implementation
//! equality checks must keep a fixed order, so these helpers never reorder
//! accumulation.

use serde::{Deserialize, Serialize};

/// A model parameter vector. All entries are expected to stay finite; the
/// solvers check this explicitly where divergence is possible.
pub type ParamVector = Vec<f64>;

pub fn zeros(d: usize) -> ParamVector {
    vec![0.0; d]
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `out += s * a`
pub fn axpy(out: &mut [f64], s: f64, a: &[f64]) {
    debug_assert_eq!(out.len(), a.len());
    for (o, x) in out.iter_mut().zip(a) {
        *o += s * x;
    }
}

pub fn scaled(a: &[f64], s: f64) -> ParamVector {
    a.iter().map(|x| s * x).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> ParamVector {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> ParamVector {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Mean of equally sized vectors, accumulated in slice order.
pub fn mean_of(vectors: &[&[f64]]) -> ParamVector {
    assert!(!vectors.is_empty());
    let d = vectors[0].len();
    let mut acc = zeros(d);
    for v in vectors {
        axpy(&mut acc, 1.0, v);
    }
    let inv = 1.0 / vectors.len() as f64;
    for x in &mut acc {
        *x *= inv;
    }
    acc
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
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

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `A x`
    pub fn matvec(&self, x: &[f64]) -> ParamVector {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `Aᵀ x`
    pub fn matvec_t(&self, x: &[f64]) -> ParamVector {
        assert_eq!(x.len(), self.rows);
        let mut out = zeros(self.cols);
        for r in 0..self.rows {
            axpy(&mut out, x[r], self.row(r));
        }
        out
    }

    /// `AᵀA`, used by the orthogonal-design invariant checks.
    pub fn gram(&self) -> Matrix {
        let mut g = Matrix::zeros(self.cols, self.cols);
        for r in 0..self.rows {
            let row = self.row(r);
            for i in 0..self.cols {
                for j in 0..self.cols {
                    g.data[i * self.cols + j] += row[i] * row[j];
                }
            }
        }
        g
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }
}

/// Solve `A x = b` by Gaussian elimination with partial pivoting.
/// Small systems only; used by test oracles and the pooled-solution checks.
pub fn solve_dense(a: &Matrix, b: &[f64]) -> Option<ParamVector> {
    let n = a.rows();
    assert_eq!(a.cols(), n);
    assert_eq!(b.len(), n);
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m.get(r, col).abs() > m.get(piv, col).abs() {
                piv = r;
            }
        }
        if m.get(piv, col).abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for c in 0..n {
                let tmp = m.get(col, c);
                m.set(col, c, m.get(piv, c));
                m.set(piv, c, tmp);
            }
            rhs.swap(col, piv);
        }
        let inv = 1.0 / m.get(col, col);
        for r in col + 1..n {
            let f = m.get(r, col) * inv;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                let v = m.get(r, c) - f * m.get(col, c);
                m.set(r, c, v);
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = zeros(n);
    for r in (0..n).rev() {
        let mut acc = rhs[r];
        for c in r + 1..n {
            acc -= m.get(r, c) * x[c];
        }
        x[r] = acc / m.get(r, r);
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose() {
        let a = Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        assert_eq!(a.matvec(&[1.0, 1.0]), vec![3.0, 7.0, 11.0]);
        assert_eq!(a.matvec_t(&[1.0, 0.0, 1.0]), vec![6.0, 8.0]);
    }

    #[test]
    fn solve_small_system() {
        let a = Matrix::from_rows(vec![vec![2.0, 1.0], vec![1.0, 3.0]]);
        let x = solve_dense(&a, &[5.0, 10.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mean_is_order_stable() {
        let v1 = vec![1.0, 0.0];
        let v2 = vec![0.0, 1.0];
        let m = mean_of(&[&v1, &v2]);
        assert_eq!(m, vec![0.5, 0.5]);
    }
}
