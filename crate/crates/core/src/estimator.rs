//! Block-averaged Kendall estimate, the Mahalanobis loss, and conversions to
//! linear correlation and precision matrices under ellipticity.

use nalgebra::DMatrix;

use crate::covariance::{SigmaEstimate, SigmaSolver, MAX_CONDITION};
use crate::error::{Error, Result};
use crate::kendall::TauEstimate;
use crate::pairs::{PairIndex, SYMMETRY_TOL};
use crate::partition::{BlockStructure, Partition};
use crate::trig::{asin_over_half_pi, sin_half_pi};

/// Starting intensity of the optional shrinkage of `P̃` toward the identity.
pub const CORRELATION_SHRINK_START: f64 = 1e-3;

/// `τ̃ = Γ τ̂` for a given partition, with its per-block values.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTauEstimate {
    pub tau_tilde: Vec<f64>,
    pub partition: Partition,
    pub per_block_values: Vec<f64>,
}

impl BlockTauEstimate {
    pub fn matrix(&self) -> DMatrix<f64> {
        let idx = PairIndex::new(self.partition.dim()).expect("partition has d >= 2");
        idx.unvectorize(&self.tau_tilde, 1.0)
            .expect("length matches the pair count")
    }
}

pub fn project_tau(tau_hat: &TauEstimate, partition: &Partition) -> Result<BlockTauEstimate> {
    if tau_hat.d != partition.dim() {
        return Err(Error::arg(format!(
            "tau has dimension {}, partition has {}",
            tau_hat.d,
            partition.dim()
        )));
    }
    project_with(&tau_hat.tau, &BlockStructure::new(partition)?)
}

pub fn project_with(tau_hat: &[f64], blocks: &BlockStructure) -> Result<BlockTauEstimate> {
    let per_block_values = blocks.block_means(tau_hat)?;
    Ok(BlockTauEstimate {
        tau_tilde: blocks.expand(&per_block_values),
        partition: blocks.partition().clone(),
        per_block_values,
    })
}

/// `(τ̂ - t)ᵀ Σ⁻¹ (τ̂ - t)`.
pub fn loss(t: &[f64], tau_hat: &[f64], sigma: &SigmaEstimate) -> Result<f64> {
    if t.len() != tau_hat.len() || t.len() != sigma.p() {
        return Err(Error::arg(format!(
            "length mismatch: t {}, tau {}, covariance {}",
            t.len(),
            tau_hat.len(),
            sigma.p()
        )));
    }
    Ok(loss_with(&SigmaSolver::new(sigma)?, t, tau_hat))
}

pub(crate) fn loss_with(solver: &SigmaSolver, t: &[f64], tau_hat: &[f64]) -> f64 {
    let e: Vec<f64> = tau_hat.iter().zip(t).map(|(a, b)| a - b).collect();
    solver.quadratic_form(&e)
}

/// Symmetric matrix with unit diagonal and entries in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    values: DMatrix<f64>,
}

impl CorrelationMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let d = values.nrows();
        if d != values.ncols() || d < 2 {
            return Err(Error::Validation(format!(
                "correlation matrix must be square with d >= 2, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        for i in 0..d {
            if (values[(i, i)] - 1.0).abs() > SYMMETRY_TOL {
                return Err(Error::Validation(format!(
                    "diagonal entry {} is {}, expected 1",
                    i + 1,
                    values[(i, i)]
                )));
            }
            for j in (i + 1)..d {
                let (a, b) = (values[(i, j)], values[(j, i)]);
                if !((a - b).abs() <= SYMMETRY_TOL) || !(a.abs() <= 1.0) {
                    return Err(Error::Validation(format!(
                        "entry ({}, {}) invalid: {a} vs {b}",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }
}

/// `P_ij = sin(π T_ij / 2)` applied to a Kendall matrix.
pub fn sine_transform(tau_matrix: &DMatrix<f64>) -> Result<CorrelationMatrix> {
    if tau_matrix.iter().any(|t| !(t.abs() <= 1.0)) {
        return Err(Error::Validation(
            "Kendall entries must lie in [-1, 1]".into(),
        ));
    }
    let mut p = tau_matrix.map(sin_half_pi);
    p.fill_diagonal(1.0);
    CorrelationMatrix::new(p)
}

/// `T_ij = (2/π) arcsin(P_ij)`.
pub fn inverse_sine_transform(p: &CorrelationMatrix) -> DMatrix<f64> {
    let mut t = p.values.map(asin_over_half_pi);
    t.fill_diagonal(1.0);
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionEstimate {
    /// Block-averaged inverse of the (possibly shrunk) correlation matrix.
    pub omega: DMatrix<f64>,
    /// Intensity used when shrinkage toward the identity was needed.
    pub shrinkage: Option<f64>,
}

/// Inverts `P̃` and averages the result over the blocks of the partition:
/// off-diagonal entries within each block, diagonal entries within each cluster.
///
/// With `allow_shrink`, a matrix that is not positive definite (or is badly
/// conditioned) is replaced by `(1 - λ) P̃ + λ I`, starting at
/// [`CORRELATION_SHRINK_START`] and doubling until the inverse is reliable.
pub fn precision_matrix(
    p_tilde: &CorrelationMatrix,
    partition: &Partition,
    allow_shrink: bool,
) -> Result<PrecisionEstimate> {
    let d = p_tilde.dim();
    if partition.dim() != d {
        return Err(Error::arg(format!(
            "correlation has dimension {d}, partition has {}",
            partition.dim()
        )));
    }
    let try_invert = |m: &DMatrix<f64>| -> Option<DMatrix<f64>> {
        let inv = m.clone().cholesky()?.inverse();
        let cond = m.norm() * inv.norm();
        (cond.is_finite() && cond <= MAX_CONDITION).then_some(inv)
    };
    let (inverse, shrinkage) = match try_invert(&p_tilde.values) {
        Some(inv) => (inv, None),
        None if !allow_shrink => {
            return Err(Error::singular(
                "correlation matrix is not positive definite or is ill-conditioned; \
                 enable correlation shrinkage",
            ))
        }
        None => {
            let mut lambda = CORRELATION_SHRINK_START;
            loop {
                let mut m = &p_tilde.values * (1.0 - lambda);
                for i in 0..d {
                    m[(i, i)] += lambda;
                }
                if let Some(inv) = try_invert(&m) {
                    break (inv, Some(lambda));
                }
                if lambda >= 1.0 {
                    return Err(Error::singular("shrinkage toward the identity failed"));
                }
                lambda = (2.0 * lambda).min(1.0);
            }
        }
    };
    Ok(PrecisionEstimate {
        omega: block_average_matrix(&inverse, partition)?,
        shrinkage,
    })
}

/// Averages a symmetric `d x d` matrix over blocks (off-diagonal) and clusters (diagonal).
pub fn block_average_matrix(m: &DMatrix<f64>, partition: &Partition) -> Result<DMatrix<f64>> {
    let d = partition.dim();
    let blocks = BlockStructure::new(partition)?;
    let idx = blocks.pair_index();
    let upper: Vec<f64> = idx
        .pairs()
        .iter()
        .map(|&(i, j)| 0.5 * (m[(i, j)] + m[(j, i)]))
        .collect();
    let averaged = blocks.gamma_apply(&upper)?;
    let mut out = idx.unvectorize(&averaged, 0.0)?;
    let k = partition.len();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for i in 0..d {
        sums[partition.label(i)] += m[(i, i)];
        counts[partition.label(i)] += 1;
    }
    for i in 0..d {
        let l = partition.label(i);
        out[(i, i)] = sums[l] / counts[l] as f64;
    }
    Ok(out)
}
