//! Small dense square matrices for frames and connection coefficients.
//!
//! Bundle ranks in the catalog are tiny, so matrices live on the stack with a
//! fixed capacity of `MAX_RANK * MAX_RANK` entries. Heavier factorizations
//! (polar projection, exponentials, determinants) go through `nalgebra`.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 4;

/// Row-major `rank x rank` matrix.
#[derive(Clone, Copy, PartialEq)]
pub struct Mat {
    rank: usize,
    data: [f64; MAX_RANK * MAX_RANK],
}

impl Mat {
    pub fn zeros(rank: usize) -> Self {
        assert!(
            (1..=MAX_RANK).contains(&rank),
            "rank {rank} outside 1..={MAX_RANK}"
        );
        Self {
            rank,
            data: [0.0; MAX_RANK * MAX_RANK],
        }
    }

    pub fn identity(rank: usize) -> Self {
        let mut m = Self::zeros(rank);
        for i in 0..rank {
            m.set(i, i, 1.0);
        }
        m
    }

    /// The complex structure on R^2: multiplication by i.
    pub fn complex_structure() -> Self {
        Self::from_row_slice(2, &[0.0, -1.0, 1.0, 0.0])
    }

    /// Rotation of R^2 by `radians`, i.e. `exp(radians * J)`.
    pub fn rotation(radians: f64) -> Self {
        let (s, c) = radians.sin_cos();
        Self::from_row_slice(2, &[c, -s, s, c])
    }

    pub fn from_row_slice(rank: usize, entries: &[f64]) -> Self {
        assert_eq!(entries.len(), rank * rank);
        let mut m = Self::zeros(rank);
        m.data[..rank * rank].copy_from_slice(entries);
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let rank = rows.len();
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::DimensionMismatch(format!(
                "matrix rank {rank} outside 1..={MAX_RANK}"
            )));
        }
        let mut m = Self::zeros(rank);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != rank {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {rank}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        Ok(m)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rank)
            .map(|i| (0..self.rank).map(|j| self.get(i, j)).collect())
            .collect()
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.rank
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.rank + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.rank + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data[..self.rank * self.rank]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.rank);
        for i in 0..self.rank {
            for j in 0..self.rank {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn scale(&self, k: f64) -> Self {
        let mut out = *self;
        for v in &mut out.data[..self.rank * self.rank] {
            *v *= k;
        }
        out
    }

    /// `self + k * other`, the workhorse of the Runge-Kutta stages.
    #[inline]
    pub fn add_scaled(&self, k: f64, other: &Self) -> Self {
        debug_assert_eq!(self.rank, other.rank);
        let mut out = *self;
        let n = self.rank * self.rank;
        for (a, b) in out.data[..n].iter_mut().zip(&other.data[..n]) {
            *a += k * b;
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rank).map(|i| self.get(i, i)).sum()
    }

    pub fn commutator(&self, other: &Self) -> Self {
        *self * *other - *other * *self
    }

    /// `||A + A^T||_F`, zero exactly for skew-symmetric matrices.
    pub fn skew_defect(&self) -> f64 {
        (*self + self.transpose()).frobenius_norm()
    }

    /// `||Q^T Q - I||_F`.
    pub fn orthogonality_defect(&self) -> f64 {
        (self.transpose() * *self - Self::identity(self.rank)).frobenius_norm()
    }

    pub fn determinant(&self) -> f64 {
        match self.rank {
            1 => self.data[0],
            2 => self.get(0, 0) * self.get(1, 1) - self.get(0, 1) * self.get(1, 0),
            _ => self.to_nalgebra().determinant(),
        }
    }

    /// Nearest orthogonal matrix, `Q (Q^T Q)^{-1/2}`.
    pub fn polar(&self) -> Self {
        let q = self.to_nalgebra();
        let gram = q.transpose() * &q;
        let eig = gram.symmetric_eigen();
        let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.max(f64::MIN_POSITIVE).sqrt());
        let root = &eig.eigenvectors
            * DMatrix::from_diagonal(&inv_sqrt)
            * eig.eigenvectors.transpose();
        Self::from_nalgebra(&(q * root))
    }

    pub fn exp(&self) -> Self {
        Self::from_nalgebra(&self.to_nalgebra().exp())
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rank, self.rank, self.as_slice())
    }

    pub fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols());
        let rank = m.nrows();
        let mut out = Self::zeros(rank);
        for i in 0..rank {
            for j in 0..rank {
                out.set(i, j, m[(i, j)]);
            }
        }
        out
    }
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.to_rows()).finish()
    }
}

impl Add for Mat {
    type Output = Mat;
    fn add(self, rhs: Mat) -> Mat {
        self.add_scaled(1.0, &rhs)
    }
}

impl AddAssign for Mat {
    fn add_assign(&mut self, rhs: Mat) {
        *self = self.add_scaled(1.0, &rhs);
    }
}

impl Sub for Mat {
    type Output = Mat;
    fn sub(self, rhs: Mat) -> Mat {
        self.add_scaled(-1.0, &rhs)
    }
}

impl Neg for Mat {
    type Output = Mat;
    fn neg(self) -> Mat {
        self.scale(-1.0)
    }
}

impl Mul for Mat {
    type Output = Mat;
    #[inline]
    fn mul(self, rhs: Mat) -> Mat {
        debug_assert_eq!(self.rank, rhs.rank);
        let r = self.rank;
        let mut out = Mat::zeros(r);
        for i in 0..r {
            for k in 0..r {
                let a = self.data[i * r + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..r {
                    out.data[i * r + j] += a * rhs.data[k * r + j];
                }
            }
        }
        out
    }
}

impl Mul<f64> for Mat {
    type Output = Mat;
    fn mul(self, k: f64) -> Mat {
        self.scale(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_structure_squares_to_minus_identity() {
        let j = Mat::complex_structure();
        assert_eq!(j * j, -Mat::identity(2));
        assert_eq!(j.skew_defect(), 0.0);
    }

    #[test]
    fn rotation_matches_exponential_of_j() {
        let r = Mat::rotation(0.7);
        let e = Mat::complex_structure().scale(0.7).exp();
        assert!((r - e).frobenius_norm() < 1e-14);
    }

    #[test]
    fn polar_recovers_rotation_from_scaled_copy() {
        let r = Mat::rotation(1.1);
        let distorted = r.scale(1.3) + Mat::from_row_slice(2, &[1e-3, 2e-3, -1e-3, 4e-4]);
        let p = distorted.polar();
        assert!(p.orthogonality_defect() < 1e-14);
        assert!((p - r).frobenius_norm() < 5e-3);
        assert!((r.scale(2.0).polar() - r).frobenius_norm() < 1e-14);
    }

    #[test]
    fn polar_keeps_reflections() {
        let refl = Mat::from_row_slice(3, &[1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0]);
        let p = refl.scale(0.5).polar();
        assert!((p - refl).frobenius_norm() < 1e-14);
        assert!((p.determinant() + 1.0).abs() < 1e-14);
    }

    #[test]
    fn from_rows_rejects_ragged_input() {
        assert!(Mat::from_rows(&[vec![1.0, 0.0], vec![0.0]]).is_err());
        assert!(Mat::from_rows(&[]).is_err());
    }
}
