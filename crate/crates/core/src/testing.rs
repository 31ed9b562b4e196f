//! Reference implementations used by the test suites. Slow by design.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::covariance::ThetaCounts;
use crate::error::{Error, Result};
use crate::kendall::DataMatrix;
use crate::pairs::PairIndex;
use crate::partition::{BlockStructure, Partition};

/// Generalized least-squares block fit `B (BᵀΣ⁻¹B)⁻¹ BᵀΣ⁻¹ τ̂` with dense algebra.
pub fn weighted_projection_check(
    tau_hat: &[f64],
    partition: &Partition,
    sigma: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let blocks = BlockStructure::new(partition)?;
    let b = blocks.membership_matrix()?;
    let sigma_inv = sigma
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::singular("dense inverse failed"))?;
    let bt_si = b.transpose() * &sigma_inv;
    let normal = &bt_si * &b;
    let rhs = &bt_si * DVector::from_column_slice(tau_hat);
    let star = normal
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::singular("normal equations singular"))?;
    Ok((b * star).iter().copied().collect())
}

/// U-statistic numerators from their defining sums over distinct indices,
/// comparing raw observations directly.
pub fn naive_theta_counts(data: &DataMatrix, r: usize, s: usize) -> Result<ThetaCounts> {
    let idx = PairIndex::new(data.d())?;
    let (i1, j1) = idx.to_pair(r)?;
    let (i2, j2) = idx.to_pair(s)?;
    let x = data.values();
    let n = data.n();
    let ind = |i: usize, j: usize, a: usize, b: usize| -> u64 {
        u64::from(x[(a, i)] < x[(b, i)] && x[(a, j)] < x[(b, j)])
    };
    let mut out = ThetaCounts::default();
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            out.vartheta[0] += ind(i1, j1, a, b) * ind(i2, j2, a, b);
            out.vartheta[1] += ind(i1, j1, a, b) * ind(i2, j2, b, a);
            for c in 0..n {
                if c == a || c == b {
                    continue;
                }
                let first = ind(i1, j1, a, b);
                if first == 0 {
                    continue;
                }
                out.theta[0] += ind(i2, j2, c, b);
                out.theta[1] += ind(i2, j2, c, a);
                out.theta[2] += ind(i2, j2, b, c);
                out.theta[3] += ind(i2, j2, a, c);
            }
        }
    }
    Ok(out)
}

/// Replaces every entry by the mean of its covariance cell.
pub fn cell_average(m: &DMatrix<f64>, partition: &Partition) -> Result<DMatrix<f64>> {
    let blocks = BlockStructure::new(partition)?;
    let mut out = m.clone();
    for entries in blocks.sigma_cells()?.values() {
        let mean = entries.iter().map(|&(r, s)| m[(r, s)]).sum::<f64>() / entries.len() as f64;
        for &(r, s) in entries {
            out[(r, s)] = mean;
            out[(s, r)] = mean;
        }
    }
    Ok(out)
}

/// Largest absolute deviation of an entry from its cell mean.
pub fn max_cell_spread(m: &DMatrix<f64>, partition: &Partition) -> Result<f64> {
    let avg = cell_average(m, partition)?;
    Ok((m - avg).abs().max())
}

pub fn random_partition<R: Rng>(rng: &mut R, d: usize) -> Partition {
    let k = rng.random_range(1..=d);
    let labels: Vec<usize> = (0..d).map(|_| rng.random_range(0..k)).collect();
    Partition::from_labels(&labels).expect("labels are valid")
}

/// Symmetric positive definite matrix that is constant on the cells of the partition.
pub fn random_cell_constant_spd<R: Rng>(rng: &mut R, partition: &Partition) -> DMatrix<f64> {
    let p = PairIndex::new(partition.dim()).expect("d >= 2").len();
    let x = DMatrix::from_fn(p, p + 2, |_, _| rng.random_range(-1.0..1.0));
    let a = &x * x.transpose();
    let mut m = cell_average(&a, partition).expect("valid partition");
    let min_eig = m.clone().symmetric_eigen().eigenvalues.min();
    let floor = rng.random_range(0.05..1.0);
    if min_eig < floor {
        for r in 0..p {
            m[(r, r)] += floor - min_eig;
        }
    }
    m
}

/// Neumaier-compensated sum, exact up to one final rounding for short inputs.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for x in values {
        let t = sum + x;
        carry += if sum.abs() >= x.abs() {
            (sum - t) + x
        } else {
            (x - t) + sum
        };
        sum = t;
    }
    sum + carry
}
