//! Finite-sample covariance of the vectorized empirical Kendall matrix.
//!
//! The plug-in estimate combines six U-statistics per entry (four triple sums
//! and two double sums over observations). They are evaluated through row and
//! column sums of the `n x n` concordance indicators and two Hadamard-product
//! totals, which are computed on packed bit rows.
//!
//! The structured estimate averages `Θ̂ = Σ̂ + c(τ̂+1)(τ̂+1)ᵀ` over the cells of
//! the partition and subtracts the rank-one term rebuilt from the block means
//! `τ̃`, where `c = 2(2n-3)/(n(n-1))`.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kendall::{kendall_tau_ranked, DataMatrix, RankedData, TiePolicy};
use crate::pairs::PairIndex;
use crate::partition::{BlockStructure, DENSE_LIMIT};

/// Condition number above which a covariance solve is refused.
pub const MAX_CONDITION: f64 = 1e12;

/// Which entries of the covariance are estimated and stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    Full,
    #[serde(alias = "diag")]
    Diagonal,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SigmaKind {
    Full(DMatrix<f64>),
    Diagonal(DVector<f64>),
}

/// Covariance of `τ̂` (or an estimate of it) together with the sample size behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaEstimate {
    pub kind: SigmaKind,
    pub n: usize,
}

impl SigmaEstimate {
    pub fn full(m: DMatrix<f64>, n: usize) -> Self {
        Self {
            kind: SigmaKind::Full(m),
            n,
        }
    }

    pub fn diagonal(v: DVector<f64>, n: usize) -> Self {
        Self {
            kind: SigmaKind::Diagonal(v),
            n,
        }
    }

    pub fn p(&self) -> usize {
        match &self.kind {
            SigmaKind::Full(m) => m.nrows(),
            SigmaKind::Diagonal(v) => v.len(),
        }
    }

    pub fn mode(&self) -> CovarianceMode {
        match self.kind {
            SigmaKind::Full(_) => CovarianceMode::Full,
            SigmaKind::Diagonal(_) => CovarianceMode::Diagonal,
        }
    }

    pub fn diagonal_values(&self) -> DVector<f64> {
        match &self.kind {
            SigmaKind::Full(m) => m.diagonal(),
            SigmaKind::Diagonal(v) => v.clone(),
        }
    }

    pub fn as_full(&self) -> Option<&DMatrix<f64>> {
        match &self.kind {
            SigmaKind::Full(m) => Some(m),
            SigmaKind::Diagonal(_) => None,
        }
    }

    /// Dense view; the diagonal kind is expanded.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.kind {
            SigmaKind::Full(m) => m.clone(),
            SigmaKind::Diagonal(v) => DMatrix::from_diagonal(v),
        }
    }
}

/// Steinian shrinkage intensity in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ShrinkageWeight(f64);

impl ShrinkageWeight {
    pub fn new(w: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::arg(format!(
                "shrinkage weight must lie in [0, 1], got {w}"
            )));
        }
        Ok(Self(w))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Numerators of the six U-statistics for one pair of pair positions: the
/// triple sums `n(n-1)(n-2) θ̂_k` and the double sums `n(n-1) ϑ̂_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ThetaCounts {
    pub theta: [u64; 4],
    pub vartheta: [u64; 2],
}

impl ThetaCounts {
    /// `(θ̂_1, ..., θ̂_4, ϑ̂_1, ϑ̂_2)`.
    pub fn estimates(&self, n: usize) -> [f64; 6] {
        let n3 = (n * (n - 1) * (n - 2)) as f64;
        let n2 = (n * (n - 1)) as f64;
        [
            self.theta[0] as f64 / n3,
            self.theta[1] as f64 / n3,
            self.theta[2] as f64 / n3,
            self.theta[3] as f64 / n3,
            self.vartheta[0] as f64 / n2,
            self.vartheta[1] as f64 / n2,
        ]
    }

    /// `n(n-1)(n-2) Σθ̂ + n(n-1) Σϑ̂`.
    pub fn total(&self) -> u64 {
        self.theta.iter().sum::<u64>() + self.vartheta.iter().sum::<u64>()
    }
}

/// `2(2n-3)/(n(n-1))`, the weight of the rank-one term.
pub fn rank_one_weight(n: usize) -> f64 {
    2.0 * (2.0 * n as f64 - 3.0) / (n as f64 * (n as f64 - 1.0))
}

/// Packed comparison rows per column: bit `s` of row `r` in `less[c]` is set
/// iff observation `r` ranks below `s` in column `c`; `greater[c]` is the
/// transpose relation.
struct ComparisonBits {
    words: usize,
    less: Vec<Vec<u64>>,
    greater: Vec<Vec<u64>>,
}

impl ComparisonBits {
    fn new(ranked: &RankedData) -> Self {
        let n = ranked.n();
        let words = n.div_ceil(64);
        let build = |c: usize, ascending: bool| {
            let order = ranked.order(c);
            let mut out = vec![0u64; n * words];
            let mut acc = vec![0u64; words];
            let mut visit = |row: usize| {
                out[row * words..(row + 1) * words].copy_from_slice(&acc);
                acc[row / 64] |= 1u64 << (row % 64);
            };
            if ascending {
                order.iter().for_each(|&row| visit(row as usize));
            } else {
                order.iter().rev().for_each(|&row| visit(row as usize));
            }
            out
        };
        let (less, greater) = (0..ranked.d())
            .into_par_iter()
            .map(|c| (build(c, false), build(c, true)))
            .unzip();
        Self {
            words,
            less,
            greater,
        }
    }

    #[inline]
    fn row<'a>(&self, rel: &'a [u64], r: usize) -> &'a [u64] {
        &rel[r * self.words..(r + 1) * self.words]
    }

    /// `Σ_{r,s} [u1 v1 rel][u2 v2 rel2]` over all rows of four relations.
    fn and4_count(&self, a: &[u64], b: &[u64], c: &[u64], e: &[u64], n: usize) -> u64 {
        let mut total = 0u64;
        for r in 0..n {
            let (ra, rb, rc, re) = (
                self.row(a, r),
                self.row(b, r),
                self.row(c, r),
                self.row(e, r),
            );
            for w in 0..self.words {
                total += u64::from((ra[w] & rb[w] & rc[w] & re[w]).count_ones());
            }
        }
        total
    }
}

/// Plug-in covariance machinery built once per data set.
pub struct PluginCovariance {
    n: usize,
    index: PairIndex,
    tau_hat: Vec<f64>,
    bits: ComparisonBits,
    /// Per pair position: row sums `I 1` and column sums `Iᵀ 1` of the indicator.
    row_sums: Vec<Vec<u32>>,
    col_sums: Vec<Vec<u32>>,
}

impl PluginCovariance {
    pub fn new(ranked: &RankedData) -> Result<Self> {
        let n = ranked.n();
        if n < 3 {
            return Err(Error::arg(format!(
                "covariance estimation needs at least 3 observations, got {n}"
            )));
        }
        let index = PairIndex::new(ranked.d())?;
        let tau_hat = kendall_tau_ranked(ranked).tau;
        let bits = ComparisonBits::new(ranked);
        let (row_sums, col_sums) = index
            .pairs()
            .par_iter()
            .map(|&(i, j)| {
                let mut rs = Vec::with_capacity(n);
                let mut cs = Vec::with_capacity(n);
                for r in 0..n {
                    let (li, lj) = (bits.row(&bits.less[i], r), bits.row(&bits.less[j], r));
                    let (gi, gj) = (bits.row(&bits.greater[i], r), bits.row(&bits.greater[j], r));
                    rs.push(li.iter().zip(lj).map(|(a, b)| (a & b).count_ones()).sum());
                    cs.push(gi.iter().zip(gj).map(|(a, b)| (a & b).count_ones()).sum());
                }
                (rs, cs)
            })
            .unzip();
        Ok(Self {
            n,
            index,
            tau_hat,
            bits,
            row_sums,
            col_sums,
        })
    }

    pub fn from_data(data: &DataMatrix) -> Result<Self> {
        Self::new(&RankedData::new(data, TiePolicy::Error)?)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.index.len()
    }

    pub fn tau_hat(&self) -> &[f64] {
        &self.tau_hat
    }

    /// `Σ I1∘I2` and `Σ I1∘I2ᵀ` for pair positions `r` and `s`.
    fn hadamard_totals(&self, r: usize, s: usize) -> (u64, u64) {
        let (i1, j1) = self.index.pair(r);
        let (i2, j2) = self.index.pair(s);
        let b = &self.bits;
        let same = b.and4_count(&b.less[i1], &b.less[j1], &b.less[i2], &b.less[j2], self.n);
        let cross = b.and4_count(
            &b.less[i1],
            &b.less[j1],
            &b.greater[i2],
            &b.greater[j2],
            self.n,
        );
        (same, cross)
    }

    /// U-statistic numerators for pair positions `r` and `s`.
    pub fn theta_counts(&self, r: usize, s: usize) -> ThetaCounts {
        let (r1, c1) = (&self.row_sums[r], &self.col_sums[r]);
        let (r2, c2) = (&self.row_sums[s], &self.col_sums[s]);
        let dot = |a: &[u32], b: &[u32]| -> u64 {
            a.iter()
                .zip(b)
                .map(|(&x, &y)| u64::from(x) * u64::from(y))
                .sum()
        };
        let (same, cross) = self.hadamard_totals(r, s);
        ThetaCounts {
            theta: [
                dot(c1, c2) - same,
                dot(r1, c2) - cross,
                dot(c1, r2) - cross,
                dot(r1, r2) - same,
            ],
            vartheta: [same, cross],
        }
    }

    /// Combined numerator `1ᵀ A1 A2 1 - 1ᵀ (J1 ∘ A2) 1` with `Ak = Ik + Ikᵀ`.
    pub fn combined_count(&self, r: usize, s: usize) -> u64 {
        let a = |k: usize| -> Vec<u64> {
            self.row_sums[k]
                .iter()
                .zip(&self.col_sums[k])
                .map(|(&x, &y)| u64::from(x) + u64::from(y))
                .collect()
        };
        let (a1, a2) = (a(r), a(s));
        let quad: u64 = a1.iter().zip(&a2).map(|(x, y)| x * y).sum();
        let (same, cross) = self.hadamard_totals(r, s);
        // Σ J1∘(I2 + J2) = Σ I1ᵀ∘I2 + Σ I1ᵀ∘I2ᵀ = cross + same
        quad - (same + cross)
    }

    /// One entry of the plug-in covariance `Σ̂`.
    pub fn entry(&self, r: usize, s: usize) -> f64 {
        let n2 = (self.n * (self.n - 1)) as f64;
        let total = self.theta_counts(r, s).total() as f64;
        16.0 * total / (n2 * n2)
            - rank_one_weight(self.n) * (self.tau_hat[r] + 1.0) * (self.tau_hat[s] + 1.0)
    }

    pub fn sigma_hat(&self, mode: CovarianceMode) -> Result<SigmaEstimate> {
        let p = self.p();
        match mode {
            CovarianceMode::Diagonal => {
                let diag: Vec<f64> = (0..p).into_par_iter().map(|r| self.entry(r, r)).collect();
                Ok(SigmaEstimate::diagonal(DVector::from_vec(diag), self.n))
            }
            CovarianceMode::Full => {
                if p > DENSE_LIMIT {
                    return Err(Error::Capacity {
                        p,
                        limit: DENSE_LIMIT,
                    });
                }
                let rows: Vec<Vec<f64>> = (0..p)
                    .into_par_iter()
                    .map(|r| (r..p).map(|s| self.entry(r, s)).collect())
                    .collect();
                let mut m = DMatrix::zeros(p, p);
                for (r, row) in rows.into_iter().enumerate() {
                    for (k, v) in row.into_iter().enumerate() {
                        m[(r, r + k)] = v;
                        m[(r + k, r)] = v;
                    }
                }
                Ok(SigmaEstimate::full(m, self.n))
            }
        }
    }
}

/// Single entry of `Σ̂` from raw data (0-based pair positions).
pub fn sigma_hat_entry(data: &DataMatrix, r: usize, s: usize) -> Result<f64> {
    let plug = PluginCovariance::from_data(data)?;
    let p = plug.p();
    for x in [r, s] {
        if x >= p {
            return Err(Error::Index {
                index: x + 1,
                max: p,
            });
        }
    }
    Ok(plug.entry(r, s))
}

pub fn sigma_hat(data: &DataMatrix, mode: CovarianceMode) -> Result<SigmaEstimate> {
    PluginCovariance::from_data(data)?.sigma_hat(mode)
}

/// Structured estimate `Σ̃`: cell averages of `Θ̂` minus the rank-one term
/// built from the block means of `τ̂`.
pub fn sigma_tilde(
    sigma_hat: &SigmaEstimate,
    tau_hat: &[f64],
    blocks: &BlockStructure,
    mode: CovarianceMode,
) -> Result<SigmaEstimate> {
    let p = blocks.p();
    if sigma_hat.p() != p || tau_hat.len() != p {
        return Err(Error::arg(format!(
            "dimension mismatch: covariance {}, tau {}, structure {p}",
            sigma_hat.p(),
            tau_hat.len()
        )));
    }
    let n = sigma_hat.n;
    let c = rank_one_weight(n);
    let tau_tilde = blocks.gamma_apply(tau_hat)?;
    match (&sigma_hat.kind, mode) {
        (SigmaKind::Diagonal(_), CovarianceMode::Full) => Err(Error::arg(
            "a full structured covariance cannot be built from a diagonal plug-in estimate",
        )),
        (kind, CovarianceMode::Diagonal) => {
            let diag = match kind {
                SigmaKind::Full(m) => m.diagonal(),
                SigmaKind::Diagonal(v) => v.clone(),
            };
            // diagonal cells coincide with the blocks
            let theta: Vec<f64> = (0..p)
                .map(|r| diag[r] + c * (tau_hat[r] + 1.0).powi(2))
                .collect();
            let means = blocks.block_means(&theta)?;
            let out = DVector::from_fn(p, |r, _| {
                means[blocks.block_of(r)] - c * (tau_tilde[r] + 1.0).powi(2)
            });
            Ok(SigmaEstimate::diagonal(out, n))
        }
        (SigmaKind::Full(m), CovarianceMode::Full) => {
            let (ids, count) = blocks.cell_ids()?;
            let mut sums = vec![0.0; count];
            let mut sizes = vec![0usize; count];
            let mut k = 0;
            for r in 0..p {
                for s in r..p {
                    let theta = m[(r, s)] + c * (tau_hat[r] + 1.0) * (tau_hat[s] + 1.0);
                    sums[ids[k] as usize] += theta;
                    sizes[ids[k] as usize] += 1;
                    k += 1;
                }
            }
            let mut out = DMatrix::zeros(p, p);
            let mut k = 0;
            for r in 0..p {
                for s in r..p {
                    let id = ids[k] as usize;
                    let v = sums[id] / sizes[id] as f64
                        - c * ((tau_tilde[r] + 1.0) * (tau_tilde[s] + 1.0));
                    out[(r, s)] = v;
                    out[(s, r)] = v;
                    k += 1;
                }
            }
            Ok(SigmaEstimate::full(out, n))
        }
    }
}

/// `(1 - w) Σ + w diag(Σ)`; `w = 1` yields the diagonal kind.
pub fn shrink(sigma: &SigmaEstimate, w: ShrinkageWeight) -> SigmaEstimate {
    match &sigma.kind {
        SigmaKind::Diagonal(_) => sigma.clone(),
        SigmaKind::Full(m) => {
            let w = w.value();
            if w == 1.0 {
                return SigmaEstimate::diagonal(m.diagonal(), sigma.n);
            }
            let mut out = m * (1.0 - w);
            for r in 0..m.nrows() {
                out[(r, r)] = m[(r, r)];
            }
            SigmaEstimate::full(out, sigma.n)
        }
    }
}

enum Factor {
    Diagonal(DVector<f64>),
    Cholesky(nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>),
    Lu(
        nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
        DMatrix<f64>,
    ),
}

/// Factored covariance, reusable across many right-hand sides.
pub struct SigmaSolver {
    factor: Factor,
    condition: f64,
}

impl SigmaSolver {
    pub fn new(sigma: &SigmaEstimate) -> Result<Self> {
        match &sigma.kind {
            SigmaKind::Diagonal(v) => {
                if let Some(r) = v.iter().position(|&x| !(x > 0.0)) {
                    return Err(Error::singular(format!(
                        "non-positive variance estimate {} at pair position {}",
                        v[r],
                        r + 1
                    )));
                }
                let (lo, hi) = v.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| {
                    (lo.min(x), hi.max(x))
                });
                let condition = hi / lo;
                if condition > MAX_CONDITION {
                    return Err(Error::singular(format!(
                        "condition number {condition:.3e} exceeds {MAX_CONDITION:.0e}"
                    )));
                }
                Ok(Self {
                    factor: Factor::Diagonal(v.clone()),
                    condition,
                })
            }
            SigmaKind::Full(m) => {
                let norm1 = (0..m.ncols())
                    .map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>())
                    .fold(0.0, f64::max);
                let factor = match m.clone().cholesky() {
                    Some(ch) => Factor::Cholesky(ch),
                    None => {
                        let lu = m.clone().lu();
                        if !lu.is_invertible() {
                            return Err(Error::singular("exactly singular covariance"));
                        }
                        Factor::Lu(lu, m.clone())
                    }
                };
                let mut solver = Self {
                    factor,
                    condition: f64::INFINITY,
                };
                let inv_norm = solver.inverse_norm1_estimate();
                let condition = norm1 * inv_norm;
                if !condition.is_finite() || condition > MAX_CONDITION {
                    return Err(Error::singular(format!(
                        "condition estimate {condition:.3e} exceeds {MAX_CONDITION:.0e}"
                    )));
                }
                solver.condition = condition;
                Ok(solver)
            }
        }
    }

    /// 1-norm condition number (exact for the diagonal kind, estimated otherwise).
    pub fn condition(&self) -> f64 {
        self.condition
    }

    fn raw_solve(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Factor::Diagonal(d) => v.component_div(d),
            Factor::Cholesky(ch) => ch.solve(v),
            Factor::Lu(lu, m) => {
                let mut x = lu
                    .solve(v)
                    .unwrap_or_else(|| DVector::from_element(v.len(), f64::NAN));
                // one step of iterative refinement
                let resid = v - m * &x;
                if let Some(dx) = lu.solve(&resid) {
                    x += dx;
                }
                x
            }
        }
    }

    /// Hager's estimate of `||Σ⁻¹||_1` (Σ symmetric).
    fn inverse_norm1_estimate(&self) -> f64 {
        let p = match &self.factor {
            Factor::Diagonal(d) => d.len(),
            Factor::Cholesky(ch) => ch.l_dirty().nrows(),
            Factor::Lu(_, m) => m.nrows(),
        };
        let mut x = DVector::from_element(p, 1.0 / p as f64);
        let mut est = 0.0;
        for _ in 0..5 {
            let y = self.raw_solve(&x);
            est = y.iter().map(|v| v.abs()).sum::<f64>();
            let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
            let z = self.raw_solve(&xi);
            let (j, zmax) =
                z.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |(bj, bv), (j, &v)| {
                        if v.abs() > bv {
                            (j, v.abs())
                        } else {
                            (bj, bv)
                        }
                    });
            if zmax <= z.dot(&x) {
                break;
            }
            x = DVector::zeros(p);
            x[j] = 1.0;
        }
        // Higham's alternating-sign safeguard
        let alt = DVector::from_fn(p, |i, _| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            s * (1.0 + i as f64 / (p.max(2) - 1) as f64)
        });
        let y = self.raw_solve(&alt);
        let alt_est = 2.0 * y.iter().map(|v| v.abs()).sum::<f64>() / (3.0 * p as f64);
        if est.is_nan() || alt_est.is_nan() {
            return f64::INFINITY;
        }
        est.max(alt_est)
    }

    /// Explicit inverse `Σ⁻¹` (dense even for the diagonal kind).
    pub fn inverse(&self) -> DMatrix<f64> {
        match &self.factor {
            Factor::Diagonal(d) => DMatrix::from_diagonal(&d.map(|x| 1.0 / x)),
            Factor::Cholesky(ch) => ch.inverse(),
            Factor::Lu(lu, m) => lu
                .try_inverse()
                .unwrap_or_else(|| DMatrix::from_element(m.nrows(), m.ncols(), f64::NAN)),
        }
    }

    pub(crate) fn diagonal_factor(&self) -> Option<&DVector<f64>> {
        match &self.factor {
            Factor::Diagonal(d) => Some(d),
            _ => None,
        }
    }

    pub fn solve(&self, v: &[f64]) -> Vec<f64> {
        self.raw_solve(&DVector::from_column_slice(v))
            .iter()
            .copied()
            .collect()
    }

    /// `eᵀ Σ⁻¹ e`.
    pub fn quadratic_form(&self, e: &[f64]) -> f64 {
        match &self.factor {
            Factor::Diagonal(d) => e.iter().zip(d.iter()).map(|(x, s)| x * x / s).sum(),
            _ => {
                let x = self.solve(e);
                e.iter().zip(&x).map(|(a, b)| a * b).sum()
            }
        }
    }
}

/// Solves `Σ x = v`.
pub fn solve_sigma(sigma: &SigmaEstimate, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != sigma.p() {
        return Err(Error::arg(format!(
            "expected a vector of length {}, got {}",
            sigma.p(),
            v.len()
        )));
    }
    Ok(SigmaSolver::new(sigma)?.solve(v))
}

const DUMP_MAGIC: &[u8; 4] = b"SIGM";

/// Writes the lower triangle of a full covariance, row by row, as
/// little-endian `f64` after a 16-byte header: `SIGM`, `u32 p`, then two
/// reserved `u32` words (zero).
pub fn write_sigma_binary<W: Write>(sigma: &DMatrix<f64>, mut out: W) -> std::io::Result<()> {
    let p = sigma.nrows() as u32;
    out.write_all(DUMP_MAGIC)?;
    out.write_all(&p.to_le_bytes())?;
    out.write_all(&0u32.to_le_bytes())?;
    out.write_all(&0u32.to_le_bytes())?;
    for r in 0..sigma.nrows() {
        for s in 0..=r {
            out.write_all(&sigma[(r, s)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_sigma_binary<R: Read>(mut input: R) -> std::io::Result<DMatrix<f64>> {
    use std::io::{Error as IoError, ErrorKind};
    let mut header = [0u8; 16];
    input.read_exact(&mut header)?;
    if &header[0..4] != DUMP_MAGIC {
        return Err(IoError::new(ErrorKind::InvalidData, "bad magic"));
    }
    let p = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let mut m = DMatrix::zeros(p, p);
    let mut buf = [0u8; 8];
    for r in 0..p {
        for s in 0..=r {
            input.read_exact(&mut buf)?;
            let v = f64::from_le_bytes(buf);
            m[(r, s)] = v;
            m[(s, r)] = v;
        }
    }
    Ok(m)
}
