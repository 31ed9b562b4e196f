//! Empirical Kendall rank-correlation matrix.
//!
//! Everything downstream works on column ranks, so the pipeline is invariant
//! under strictly increasing transforms of the margins. Ties violate the
//! continuity assumption and are rejected unless [`TiePolicy::BreakByOrder`]
//! is requested.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pairs::PairIndex;

/// `n x d` matrix of observations (rows) on `d` variables (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let (n, d) = values.shape();
        if n < 2 {
            return Err(Error::arg(format!("need at least 2 observations, got {n}")));
        }
        if d < 2 {
            return Err(Error::arg(format!("need at least 2 variables, got {d}")));
        }
        if let Some(pos) = values.iter().position(|x| !x.is_finite()) {
            // column-major storage
            return Err(Error::Validation(format!(
                "non-finite value at row {}, column {}",
                pos % n + 1,
                pos / n + 1
            )));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::arg(format!(
                "row {} has {} values, expected {d}",
                bad + 1,
                rows[bad].len()
            )));
        }
        Self::new(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }
}

/// How tied observations within a column are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TiePolicy {
    #[default]
    Error,
    /// Tied values are ordered by their row position; a warning is logged.
    BreakByOrder,
}

/// Column ranks `0..n` (a permutation per column).
#[derive(Debug, Clone)]
pub struct RankedData {
    n: usize,
    ranks: Vec<Vec<u32>>,
    /// `order[c][k]` is the row holding rank `k` in column `c`.
    order: Vec<Vec<u32>>,
}

impl RankedData {
    pub fn new(data: &DataMatrix, ties: TiePolicy) -> Result<Self> {
        let n = data.n();
        let mut ranks = Vec::with_capacity(data.d());
        let mut order = Vec::with_capacity(data.d());
        for c in 0..data.d() {
            let col = data.values.column(c);
            let mut idx: Vec<u32> = (0..n as u32).collect();
            // stable sort keeps row order among ties
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            let tied = idx
                .windows(2)
                .any(|w| col[w[0] as usize] == col[w[1] as usize]);
            if tied {
                match ties {
                    TiePolicy::Error => return Err(Error::Ties { column: c + 1 }),
                    TiePolicy::BreakByOrder => log::warn!(
                        "ties in column {} broken by row order; results depart from the continuous theory",
                        c + 1
                    ),
                }
            }
            let mut rk = vec![0u32; n];
            for (k, &row) in idx.iter().enumerate() {
                rk[row as usize] = k as u32;
            }
            ranks.push(rk);
            order.push(idx);
        }
        Ok(Self { n, ranks, order })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.ranks.len()
    }

    pub fn ranks(&self, column: usize) -> &[u32] {
        &self.ranks[column]
    }

    pub(crate) fn order(&self, column: usize) -> &[u32] {
        &self.order[column]
    }

    /// Number of unordered observation pairs concordant in columns `i` and `j`,
    /// by merge-sort inversion counting in `O(n log n)`.
    pub fn concordant_pairs(&self, i: usize, j: usize) -> u64 {
        let mut seq: Vec<u32> = self.order[i]
            .iter()
            .map(|&row| self.ranks[j][row as usize])
            .collect();
        let mut buf = vec![0u32; seq.len()];
        let inversions = sort_count(&mut seq, &mut buf);
        let total = (self.n as u64) * (self.n as u64 - 1) / 2;
        total - inversions
    }

    /// Same count by direct enumeration of all pairs.
    pub fn concordant_pairs_naive(&self, i: usize, j: usize) -> u64 {
        let (a, b) = (&self.ranks[i], &self.ranks[j]);
        let mut count = 0u64;
        for r in 0..self.n {
            for s in (r + 1)..self.n {
                if (a[r] < a[s]) == (b[r] < b[s]) {
                    count += 1;
                }
            }
        }
        count
    }
}

/// Sorts `v` ascending and returns its number of inversions.
fn sort_count(v: &mut [u32], buf: &mut [u32]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = {
        let (left, right) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        sort_count(left, bl) + sort_count(right, br)
    };
    let (mut a, mut b, mut k) = (0, mid, 0);
    while a < mid && b < n {
        if v[a] <= v[b] {
            buf[k] = v[a];
            a += 1;
        } else {
            buf[k] = v[b];
            inv += (mid - a) as u64;
            b += 1;
        }
        k += 1;
    }
    buf[k..k + mid - a].copy_from_slice(&v[a..mid]);
    k += mid - a;
    buf[k..k + n - b].copy_from_slice(&v[b..n]);
    v.copy_from_slice(&buf[..n]);
    inv
}

#[inline]
pub(crate) fn tau_from_concordant(concordant: u64, n: usize) -> f64 {
    let nn = (n * (n - 1)) as f64;
    -1.0 + 4.0 * concordant as f64 / nn
}

/// Vectorized empirical Kendall matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TauEstimate {
    pub tau: Vec<f64>,
    pub d: usize,
    pub n: usize,
}

impl TauEstimate {
    /// Symmetric `d x d` matrix view with unit diagonal.
    pub fn matrix(&self) -> DMatrix<f64> {
        PairIndex::new(self.d)
            .and_then(|idx| idx.unvectorize(&self.tau, 1.0))
            .expect("tau vector length matches d")
    }
}

/// Empirical Kendall matrix with the default tie policy (ties are an error).
pub fn kendall_tau(data: &DataMatrix) -> Result<TauEstimate> {
    let ranked = RankedData::new(data, TiePolicy::Error)?;
    Ok(kendall_tau_ranked(&ranked))
}

/// Empirical Kendall matrix from precomputed ranks, `O(p n log n)`.
pub fn kendall_tau_ranked(ranked: &RankedData) -> TauEstimate {
    let idx = PairIndex::new(ranked.d()).expect("ranked data has d >= 2");
    let tau = idx
        .pairs()
        .par_iter()
        .map(|&(i, j)| tau_from_concordant(ranked.concordant_pairs(i, j), ranked.n()))
        .collect();
    TauEstimate {
        tau,
        d: ranked.d(),
        n: ranked.n(),
    }
}

/// Definitional `O(p n^2)` evaluation of the double sum over ordered pairs.
pub fn kendall_tau_naive(data: &DataMatrix) -> Result<TauEstimate> {
    RankedData::new(data, TiePolicy::Error)?;
    let x = data.values();
    let n = data.n();
    let idx = PairIndex::new(data.d())?;
    let tau = idx
        .pairs()
        .iter()
        .map(|&(i, j)| {
            let mut count = 0u64;
            for r in 0..n {
                for s in 0..n {
                    if r != s && x[(r, i)] <= x[(s, i)] && x[(r, j)] <= x[(s, j)] {
                        count += 1;
                    }
                }
            }
            tau_from_concordant(count, n)
        })
        .collect();
    Ok(TauEstimate {
        tau,
        d: data.d(),
        n,
    })
}

/// Dense `n x n` concordance indicator for columns `i` and `j`:
/// entry `(r, s)` is 1 iff `X_ri < X_si` and `X_rj < X_sj`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConcordanceIndicator {
    n: usize,
    cells: Vec<bool>,
}

impl ConcordanceIndicator {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, r: usize, s: usize) -> bool {
        self.cells[r * self.n + s]
    }

    pub fn sum(&self) -> u64 {
        self.cells.iter().filter(|&&c| c).count() as u64
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |r, s| f64::from(u8::from(self.get(r, s))))
    }
}

pub fn concordance_indicator(
    data: &DataMatrix,
    i: usize,
    j: usize,
) -> Result<ConcordanceIndicator> {
    let d = data.d();
    if i == j {
        return Err(Error::arg("indicator needs two distinct columns"));
    }
    if i >= d || j >= d {
        return Err(Error::Index {
            index: i.max(j) + 1,
            max: d,
        });
    }
    let ranked = RankedData::new(data, TiePolicy::Error)?;
    let (a, b) = (ranked.ranks(i), ranked.ranks(j));
    let n = data.n();
    let mut cells = vec![false; n * n];
    for r in 0..n {
        for s in 0..n {
            cells[r * n + s] = a[r] < a[s] && b[r] < b[s];
        }
    }
    Ok(ConcordanceIndicator { n, cells })
}
