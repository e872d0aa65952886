//! Small dense matrices and an LU solver with partial pivoting.
//!
//! Designs in this crate have a handful of columns, so nothing here is
//! blocked or vectorised.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pivots smaller than this fraction of the matrix scale are treated as zero.
pub const RELATIVE_PIVOT_TOL: f64 = 1e-12;

/// Dense row-major matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "matrix entry ({}, {}) is not finite",
                bad / cols.max(1),
                bad % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Dimension(format!(
                "vector of length {} against {} columns",
                v.len(),
                self.cols
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Dimension(format!(
                "hstack of {} and {} rows",
                self.rows, other.rows
            )));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Keeps the rows whose mask entry is true.
    pub fn select_rows(&self, mask: &[bool]) -> Matrix {
        let mut data = Vec::new();
        let mut rows = 0;
        for (i, &keep) in mask.iter().enumerate().take(self.rows) {
            if keep {
                data.extend_from_slice(self.row(i));
                rows += 1;
            }
        }
        Matrix {
            rows,
            cols: self.cols,
            data,
        }
    }

    /// Multiplies row i by `scale[i]`.
    pub fn scale_rows(&self, scale: &[f64]) -> Matrix {
        let mut out = self.clone();
        for i in 0..self.rows {
            for v in &mut out.data[i * self.cols..(i + 1) * self.cols] {
                *v *= scale[i];
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| {
                (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol * (1.0 + self[(i, j)].abs()))
            })
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// LU factorisation `PA = LU` of a square matrix.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    /// smallest |pivot| / max |a_ij|
    pub pivot_ratio: f64,
}

impl Lu {
    pub fn factor(a: &Matrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::Dimension(format!(
                "LU needs a square matrix, got {}x{}",
                a.rows, a.cols
            )));
        }
        let n = a.rows;
        let scale = a.max_abs();
        if n > 0 && scale == 0.0 {
            return Err(Error::Singular {
                context: "zero matrix".into(),
                pivot_ratio: 0.0,
            });
        }
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, -1.0), |best, c| if c.1 > best.1 { c } else { best });
            min_pivot = min_pivot.min(pmax);
            if pmax <= RELATIVE_PIVOT_TOL * scale {
                return Err(Error::Singular {
                    context: format!("pivot {k} of {n}"),
                    pivot_ratio: pmax / scale,
                });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let factor = lu[i * n + k] / pivot;
                lu[i * n + k] = factor;
                if factor != 0.0 {
                    for j in k + 1..n {
                        lu[i * n + j] -= factor * lu[k * n + j];
                    }
                }
            }
        }
        Ok(Self {
            n,
            lu,
            perm,
            pivot_ratio: if n == 0 { 1.0 } else { min_pivot / scale },
        })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if b.len() != n {
            return Err(Error::Dimension(format!(
                "right-hand side of length {} for a {n}x{n} system",
                b.len()
            )));
        }
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.lu[i * n + j] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.lu[i * n + j] * x[j]).sum();
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Matrix {
        let n = self.n;
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e).expect("dimension checked");
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

/// Solves the square system `A x = b`.
pub fn solve_linear(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.rows {
        return Err(Error::Dimension(format!(
            "right-hand side of length {} for {} rows",
            b.len(),
            a.rows
        )));
    }
    Lu::factor(a)?.solve(b)
}

/// Solves `A x = b` after scaling rows and columns to unit max-abs. Used for
/// systems whose columns carry very different units (a CD4 count next to an
/// intercept, say); singularity is judged on the equilibrated matrix.
pub(crate) fn solve_equilibrated(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows;
    let mut col_scale = vec![0.0; a.cols];
    for i in 0..n {
        for (j, s) in col_scale.iter_mut().enumerate() {
            *s = f64::max(*s, a[(i, j)].abs());
        }
    }
    if let Some(j) = col_scale.iter().position(|&s| s == 0.0) {
        return Err(Error::Singular {
            context: format!("column {j} is identically zero"),
            pivot_ratio: 0.0,
        });
    }
    let mut scaled = a.clone();
    let mut rhs = b.to_vec();
    for i in 0..n {
        for j in 0..a.cols {
            scaled[(i, j)] /= col_scale[j];
        }
        let r = scaled.row(i).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if r == 0.0 {
            return Err(Error::Singular {
                context: format!("row {i} is identically zero"),
                pivot_ratio: 0.0,
            });
        }
        for j in 0..a.cols {
            scaled[(i, j)] /= r;
        }
        rhs[i] /= r;
    }
    let y = solve_linear(&scaled, &rhs)?;
    Ok(y.iter().zip(&col_scale).map(|(v, s)| v / s).collect())
}
