//! Lexicographic vectorization of the strict upper triangle of a symmetric
//! `d x d` matrix.
//!
//! Position `r` of the vector holds entry `(i_r, j_r)` with `i_r < j_r`, in the
//! order `(0,1), (0,2), ..., (0,d-1), (1,2), ..., (d-2,d-1)`. All indices are
//! 0-based in code; error messages report them 1-based.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Absolute tolerance used when checking symmetry on input.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Bijection between flat positions `0..p` and pairs `i < j` of `0..d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairIndex {
    d: usize,
    p: usize,
    pairs: Vec<(usize, usize)>,
}

/// Number of unordered pairs of `d` items.
pub fn pair_count(d: usize) -> usize {
    d * d.saturating_sub(1) / 2
}

impl PairIndex {
    pub fn new(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::arg(format!("dimension must be at least 2, got {d}")));
        }
        let p = pair_count(d);
        let mut pairs = Vec::with_capacity(p);
        for i in 0..d {
            for j in (i + 1)..d {
                pairs.push((i, j));
            }
        }
        Ok(Self { d, p, pairs })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.p
    }

    pub fn is_empty(&self) -> bool {
        self.p == 0
    }

    /// Pair `(i, j)`, `i < j`, stored at flat position `r`.
    pub fn to_pair(&self, r: usize) -> Result<(usize, usize)> {
        self.pairs.get(r).copied().ok_or(Error::Index {
            index: r + 1,
            max: self.p,
        })
    }

    /// Unchecked lookup for hot loops; `r` must be `< p`.
    #[inline]
    pub fn pair(&self, r: usize) -> (usize, usize) {
        self.pairs[r]
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Flat position of the pair `(i, j)`; requires `i < j < d`.
    pub fn to_flat(&self, i: usize, j: usize) -> Result<usize> {
        if i >= j {
            return Err(Error::arg(format!(
                "pair ({}, {}) must satisfy i < j",
                i + 1,
                j + 1
            )));
        }
        if j >= self.d {
            return Err(Error::Index {
                index: j + 1,
                max: self.d,
            });
        }
        Ok(self.flat(i, j))
    }

    /// Unchecked version of [`PairIndex::to_flat`].
    #[inline]
    pub fn flat(&self, i: usize, j: usize) -> usize {
        // pairs preceding row i: sum_{k<i} (d - 1 - k)
        i * (2 * self.d - i - 1) / 2 + (j - i - 1)
    }

    /// Flat position for an unordered pair of distinct indices.
    #[inline]
    pub fn flat_unordered(&self, a: usize, b: usize) -> usize {
        if a < b {
            self.flat(a, b)
        } else {
            self.flat(b, a)
        }
    }

    /// Stacks the strict upper triangle of a symmetric matrix.
    pub fn vectorize(&self, m: &DMatrix<f64>) -> Result<Vec<f64>> {
        if m.nrows() != self.d || m.ncols() != self.d {
            return Err(Error::arg(format!(
                "expected a {d}x{d} matrix, got {}x{}",
                m.nrows(),
                m.ncols(),
                d = self.d
            )));
        }
        let mut out = Vec::with_capacity(self.p);
        for &(i, j) in &self.pairs {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if !((a - b).abs() <= SYMMETRY_TOL) {
                return Err(Error::Validation(format!(
                    "matrix not symmetric at ({}, {}): {a} vs {b}",
                    i + 1,
                    j + 1
                )));
            }
            out.push(a);
        }
        Ok(out)
    }

    /// Rebuilds the symmetric matrix from its vectorized upper triangle.
    pub fn unvectorize(&self, v: &[f64], diag_value: f64) -> Result<DMatrix<f64>> {
        if v.len() != self.p {
            return Err(Error::arg(format!(
                "expected a vector of length {}, got {}",
                self.p,
                v.len()
            )));
        }
        let mut m = DMatrix::from_element(self.d, self.d, diag_value);
        for (r, &(i, j)) in self.pairs.iter().enumerate() {
            m[(i, j)] = v[r];
            m[(j, i)] = v[r];
        }
        Ok(m)
    }
}
