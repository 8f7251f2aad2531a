//! Symmetric matrices stored by their upper triangle.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues below this magnitude (relative to the matrix scale) are treated as zero
/// when splitting into positive and negative parts.
pub const EIGEN_CLAMP: f64 = 1e-14;

/// A `dim × dim` symmetric matrix. Only the upper triangle is stored, so symmetry is exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix {
    dim: usize,
    upper: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            dim,
            upper: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diagonal(&vec![1.0; dim])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    /// Builds a matrix from full rows, rejecting asymmetric input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidParameter(format!(
                "matrix rows must all have length {dim}"
            )));
        }
        let scale = rows
            .iter()
            .flatten()
            .fold(1.0_f64, |acc, v| acc.max(v.abs()));
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                if (rows[i][j] - rows[j][i]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidParameter(format!(
                        "matrix is not symmetric at ({i},{j})"
                    )));
                }
                m.set(i, j, 0.5 * (rows[i][j] + rows[j][i]));
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * (2 * self.dim - i + 1) / 2 + (j - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[self.offset(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.offset(i, j);
        self.upper[k] = v;
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// `tr(self · other)`.
    pub fn dot(&self, other: &SymMatrix) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += self.get(i, j) * other.get(i, j);
            }
        }
        s
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.upper.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    /// `eᵀ M e` for an integer lattice direction.
    pub fn quad_form(&self, e: &[i64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += e[i] as f64 * self.get(i, j) * e[j] as f64;
            }
        }
        s
    }

    pub fn scale(&self, t: f64) -> Self {
        SymMatrix {
            dim: self.dim,
            upper: self.upper.iter().map(|v| v * t).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.upper.iter().all(|v| v.is_finite())
    }

    fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    /// Eigenvalues in ascending order together with orthonormal eigenvectors.
    pub fn eigen(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        if self.dim == 1 {
            return (vec![self.get(0, 0)], vec![vec![1.0]]);
        }
        let eig = self.to_dense().symmetric_eigen();
        let mut pairs: Vec<(f64, Vec<f64>)> = (0..self.dim)
            .map(|k| {
                (
                    eig.eigenvalues[k],
                    eig.eigenvectors.column(k).iter().copied().collect(),
                )
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.into_iter().unzip()
    }

    /// Eigenvalues with round-off sized entries snapped to zero.
    pub fn clamped_eigenvalues(&self) -> Vec<f64> {
        let (vals, _) = self.eigen();
        let cut = EIGEN_CLAMP * self.max_abs().max(1.0);
        vals.into_iter()
            .map(|v| if v.abs() <= cut { 0.0 } else { v })
            .collect()
    }

    /// Splits `M = M₊ − M₋` with `M± ⪰ 0` and `M₋M₊ = 0`.
    pub fn split_parts(&self) -> (SymMatrix, SymMatrix) {
        let (vals, vecs) = self.eigen();
        let cut = EIGEN_CLAMP * self.max_abs().max(1.0);
        let mut plus = SymMatrix::zeros(self.dim);
        let mut minus = SymMatrix::zeros(self.dim);
        for (mu, v) in vals.iter().zip(&vecs) {
            if mu.abs() <= cut {
                continue;
            }
            let target = if *mu > 0.0 { &mut plus } else { &mut minus };
            let w = mu.abs();
            for i in 0..self.dim {
                for j in i..self.dim {
                    let cur = target.get(i, j);
                    target.set(i, j, cur + w * v[i] * v[j]);
                }
            }
        }
        (plus, minus)
    }

    fn zip_with(&self, other: &SymMatrix, f: impl Fn(f64, f64) -> f64) -> SymMatrix {
        assert_eq!(self.dim, other.dim, "matrix dimensions differ");
        SymMatrix {
            dim: self.dim,
            upper: self
                .upper
                .iter()
                .zip(&other.upper)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Neg for &SymMatrix {
    type Output = SymMatrix;
    fn neg(self) -> SymMatrix {
        self.scale(-1.0)
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, t: f64) -> SymMatrix {
        self.scale(t)
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMatrix::from_rows(&rows)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.to_rows()
    }
}

/// Euclidean norm of a vector.
pub fn vec_norm(p: &[f64]) -> f64 {
    p.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upper_storage_is_symmetric() {
        let mut m = SymMatrix::zeros(3);
        m.set(2, 0, 5.0);
        assert_eq!(m.get(0, 2), 5.0);
        assert_eq!(m.to_rows()[2][0], 5.0);
    }

    #[test]
    fn rejects_asymmetric_rows() {
        assert!(SymMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).is_err());
        assert!(SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0]]).is_err());
    }

    #[test]
    fn split_parts_are_orthogonal() {
        let m = SymMatrix::from_rows(&[
            vec![1.0, 2.0, 0.5],
            vec![2.0, -3.0, 0.0],
            vec![0.5, 0.0, 0.25],
        ])
        .unwrap();
        let (p, n) = m.split_parts();
        let diff = &(&p - &n) - &m;
        assert!(diff.max_abs() < 1e-12);
        // M₋M₊ = 0
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| n.get(i, k) * p.get(k, j)).sum();
                assert!(s.abs() < 1e-12);
            }
        }
        assert!(p.clamped_eigenvalues().iter().all(|&v| v >= 0.0));
        assert!(n.clamped_eigenvalues().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn serde_uses_full_rows() {
        let m = SymMatrix::from_diagonal(&[1.0, -2.0]);
        let rows: Vec<Vec<f64>> = m.clone().into();
        assert_eq!(rows, vec![vec![1.0, 0.0], vec![0.0, -2.0]]);
        assert_eq!(SymMatrix::try_from(rows).unwrap(), m);
    }
}
