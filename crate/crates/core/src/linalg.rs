//! Small dense linear algebra: just enough for desk-scale models.
//!
//! Everything is `f64` and row-major. Systems here have at most a few dozen
//! coordinates, so Gaussian elimination with partial pivoting and plain power
//! iteration beat pulling in a full linear algebra stack.

use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Pivots with absolute value below this threshold are treated as singular.
pub const PIVOT_EPS: f64 = 1e-12;

/// Norm index for vector norms and induced operator norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormIndex {
    L1,
    L2,
    LInf,
}

impl NormIndex {
    pub fn as_str(&self) -> &'static str {
        match self {
            NormIndex::L1 => "1",
            NormIndex::L2 => "2",
            NormIndex::LInf => "inf",
        }
    }

    pub fn parse(text: &str) -> Option<NormIndex> {
        match text {
            "1" => Some(NormIndex::L1),
            "2" => Some(NormIndex::L2),
            "inf" | "Inf" | "INF" => Some(NormIndex::LInf),
            _ => None,
        }
    }
}

impl std::fmt::Display for NormIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for NormIndex {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for NormIndex {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        NormIndex::parse(&text)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid norm index `{text}`")))
    }
}

/// `ℓp` norm of a vector.
pub fn lp_norm(v: &[f64], p: NormIndex) -> f64 {
    match p {
        NormIndex::L1 => v.iter().map(|x| x.abs()).sum(),
        NormIndex::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        NormIndex::LInf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
    }
}

/// `ℓp` distance between two vectors of equal length.
pub fn lp_dist(a: &[f64], b: &[f64], p: NormIndex) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    match p {
        NormIndex::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        NormIndex::L2 => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        NormIndex::LInf => a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs())),
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Matrix {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Matrix {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
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
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.set(i, j, out.get(i, j) + a * other.get(k, j));
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, x)| a * x).sum())
            .collect()
    }

    /// Scales column `j` by `factor` in place.
    pub fn scale_col(&mut self, j: usize, factor: f64) {
        for i in 0..self.rows {
            self.set(i, j, self.get(i, j) * factor);
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs_col_sum(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_row_sum(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Solves `self * x = rhs` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let solved = self.solve_many(&[rhs.to_vec()])?;
        Ok(solved.into_iter().next().unwrap())
    }

    /// Solves the same square system for several right-hand sides at once.
    pub fn solve_many(&self, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        assert_eq!(self.rows, self.cols, "system must be square");
        let n = self.rows;
        let k = rhs.len();
        // augmented matrix [A | rhs...]
        let width = n + k;
        let mut aug = vec![0.0; n * width];
        for i in 0..n {
            aug[i * width..i * width + n].copy_from_slice(self.row(i));
            for (c, r) in rhs.iter().enumerate() {
                assert_eq!(r.len(), n);
                aug[i * width + n + c] = r[i];
            }
        }
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&a, &b| {
                    aug[a * width + col]
                        .abs()
                        .total_cmp(&aug[b * width + col].abs())
                })
                .unwrap();
            let pivot = aug[pivot_row * width + col];
            if pivot.abs() < PIVOT_EPS {
                return Err(Error::SingularSystem { pivot });
            }
            if pivot_row != col {
                for j in 0..width {
                    aug.swap(col * width + j, pivot_row * width + j);
                }
            }
            for row in 0..n {
                if row == col {
                    continue;
                }
                let factor = aug[row * width + col] / pivot;
                if factor == 0.0 {
                    continue;
                }
                for j in col..width {
                    aug[row * width + j] -= factor * aug[col * width + j];
                }
            }
        }
        let mut out = vec![vec![0.0; n]; k];
        for i in 0..n {
            let pivot = aug[i * width + i];
            for (c, col_out) in out.iter_mut().enumerate() {
                col_out[i] = aug[i * width + n + c] / pivot;
            }
        }
        Ok(out)
    }

    /// Matrix inverse via column-wise solves.
    pub fn inverse(&self) -> Result<Matrix> {
        let n = self.rows;
        let unit_cols: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                e
            })
            .collect();
        let cols = self.solve_many(&unit_cols)?;
        let mut inv = Matrix::zeros(n, n);
        for (j, col) in cols.iter().enumerate() {
            for (i, value) in col.iter().enumerate() {
                inv.set(i, j, *value);
            }
        }
        Ok(inv)
    }

    /// Induced operator norm for p in {1, 2, inf}.
    ///
    /// The p = 2 case runs power iteration on `AᵀA`; `None` means the
    /// iteration did not converge within the budget.
    pub fn operator_norm(&self, p: NormIndex, tol: f64, max_iter: usize) -> Option<f64> {
        match p {
            NormIndex::L1 => Some(self.max_abs_col_sum()),
            NormIndex::LInf => Some(self.max_abs_row_sum()),
            NormIndex::L2 => self.spectral_norm(tol, max_iter),
        }
    }

    /// Largest singular value via power iteration on the Gram matrix.
    pub fn spectral_norm(&self, tol: f64, max_iter: usize) -> Option<f64> {
        if self.frobenius_norm() == 0.0 {
            return Some(0.0);
        }
        let gram = self.transpose().matmul(self);
        let n = gram.rows();
        // Deterministic starts; fall back to basis vectors if one lands in
        // the kernel of the Gram matrix.
        let mut starts: Vec<Vec<f64>> = vec![(0..n)
            .map(|i| 1.0 + (i as f64 + 1.0) / (n as f64 + 1.0))
            .collect()];
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            starts.push(e);
        }
        'starts: for start in starts {
            let mut v = start;
            let norm = lp_norm(&v, NormIndex::L2);
            if norm == 0.0 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let mut rayleigh = f64::NAN;
            for _ in 0..max_iter {
                let w = gram.matvec(&v);
                let next_rayleigh: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
                let w_norm = lp_norm(&w, NormIndex::L2);
                if w_norm == 0.0 {
                    // start vector lies in the kernel, try the next one
                    continue 'starts;
                }
                if !next_rayleigh.is_finite() {
                    return None;
                }
                if (next_rayleigh - rayleigh).abs() <= tol * next_rayleigh.abs().max(1.0) {
                    return Some(next_rayleigh.max(0.0).sqrt());
                }
                rayleigh = next_rayleigh;
                v = w.into_iter().map(|x| x / w_norm).collect();
            }
            return None;
        }
        // every start was in the kernel, so the Gram matrix is zero
        Some(0.0)
    }
}

impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.rows))?;
        for i in 0..self.rows {
            seq.serialize_element(self.row(i))?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(deserializer)?;
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != c) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(Matrix::from_rows(rows))
    }
}
