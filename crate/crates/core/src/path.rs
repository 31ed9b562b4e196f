//! Greedy agglomerative path of nested partitions and the chi-square criterion.
//!
//! Step `i` of the path holds a partition into `i` clusters, from `i = d`
//! (all singletons) down to `i = 1` (one cluster). Each step merges the two
//! clusters whose merged block averages minimize the loss under the covariance
//! estimated for the previous, finer step; the covariance is then re-averaged
//! over the cells of the chosen partition. Ties go to the lexicographically
//! smallest pair of cluster labels.
//!
//! Candidate merges are scored in block space: with `M = Σ⁻¹`, `Q = BᵀMB`
//! and `u = BᵀMτ̂`, a merge only changes the means of the blocks touching the
//! two merged clusters, so its loss differs from the current one by
//! `2 gᵀδ + δᵀQδ`, where `g = Q m - u` and `δ` is the change of the block
//! means `m`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{
    shrink, sigma_tilde, CovarianceMode, PluginCovariance, ShrinkageWeight, SigmaEstimate,
    SigmaSolver,
};
use crate::error::{Error, Result};
use crate::estimator::{loss_with, project_with, BlockTauEstimate};
use crate::kendall::{DataMatrix, RankedData, TauEstimate, TiePolicy};
use crate::partition::{BlockStructure, Partition, DENSE_LIMIT};

/// Losses at or below this value count as zero when the degrees of freedom vanish.
pub const ZERO_LOSS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    /// `partitions[k]` has `d - k` clusters.
    pub partitions: Vec<Partition>,
    pub losses: Vec<f64>,
    pub alphas: Vec<f64>,
    pub taus: Vec<BlockTauEstimate>,
    /// Number of distinct blocks per step.
    pub block_counts: Vec<usize>,
    pub w: f64,
    pub mode: CovarianceMode,
    pub p: usize,
}

impl PathResult {
    pub fn d(&self) -> usize {
        self.partitions.len()
    }

    /// Position in the vectors for step `i` (number of clusters).
    pub fn position(&self, i: usize) -> Result<usize> {
        let d = self.d();
        if i == 0 || i > d {
            return Err(Error::Index { index: i, max: d });
        }
        Ok(d - i)
    }

    pub fn step(&self, i: usize) -> Result<PathStep<'_>> {
        let k = self.position(i)?;
        Ok(PathStep {
            i,
            partition: &self.partitions[k],
            loss: self.losses[k],
            alpha: self.alphas[k],
            block_count: self.block_counts[k],
            tau: &self.taus[k],
        })
    }

    pub fn steps(&self) -> impl Iterator<Item = PathStep<'_>> {
        (1..=self.d())
            .rev()
            .map(|i| self.step(i).expect("in range"))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PathStep<'a> {
    pub i: usize,
    pub partition: &'a Partition,
    pub loss: f64,
    pub alpha: f64,
    pub block_count: usize,
    pub tau: &'a BlockTauEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    /// Number of clusters of the selected step.
    pub i: usize,
}

/// Computes `τ̂` and `Σ̂` from the data and builds the path.
pub fn build_path(
    data: &DataMatrix,
    w: ShrinkageWeight,
    mode: CovarianceMode,
) -> Result<(TauEstimate, PathResult)> {
    let ranked = RankedData::new(data, TiePolicy::Error)?;
    let plug = PluginCovariance::new(&ranked)?;
    let mode = effective_mode(mode, w);
    let sigma_hat = plug.sigma_hat(mode)?;
    let tau = TauEstimate {
        tau: plug.tau_hat().to_vec(),
        d: data.d(),
        n: data.n(),
    };
    let path = build_path_from(&tau, &sigma_hat, w)?;
    Ok((tau, path))
}

/// The full estimate is unnecessary when shrinkage removes every off-diagonal entry.
fn effective_mode(mode: CovarianceMode, w: ShrinkageWeight) -> CovarianceMode {
    if w.value() == 1.0 {
        CovarianceMode::Diagonal
    } else {
        mode
    }
}

/// Builds the path from a precomputed `τ̂` and plug-in covariance.
pub fn build_path_from(
    tau_hat: &TauEstimate,
    sigma_hat: &SigmaEstimate,
    w: ShrinkageWeight,
) -> Result<PathResult> {
    let d = tau_hat.d;
    let p = tau_hat.tau.len();
    if sigma_hat.p() != p {
        return Err(Error::arg(format!(
            "covariance has size {}, tau has {p}",
            sigma_hat.p()
        )));
    }
    let mode = sigma_hat.mode();
    if mode == CovarianceMode::Full && p > DENSE_LIMIT {
        return Err(Error::Capacity {
            p,
            limit: DENSE_LIMIT,
        });
    }
    let tau = &tau_hat.tau;

    let mut partition = Partition::singletons(d);
    let mut blocks = BlockStructure::new(&partition)?;
    // singleton cells hold one entry each, so the structured estimate is Σ̂ itself
    let mut sigma_w = shrink(sigma_hat, w);
    // factored on first use: a zero residual or a forced merge needs no inverse
    let mut solver: Option<SigmaSolver> = None;

    let mut partitions = vec![partition.clone()];
    let mut losses = vec![0.0];
    let mut taus = vec![project_with(tau, &blocks)?];
    let mut block_counts = vec![blocks.len()];

    for i in (1..d).rev() {
        let (a, b) = if partition.len() == 2 {
            (0, 1)
        } else {
            best_merge(&blocks, tau, solver_for(&mut solver, &sigma_w, i + 1)?)
        };
        partition = partition.merge(a, b)?;
        blocks = BlockStructure::new(&partition)?;
        let tilde = sigma_tilde(sigma_hat, tau, &blocks, mode)?;
        sigma_w = shrink(&tilde, w);
        solver = None;
        let est = project_with(tau, &blocks)?;
        let l = if est.tau_tilde == *tau {
            0.0
        } else {
            loss_with(solver_for(&mut solver, &sigma_w, i)?, &est.tau_tilde, tau)
        };
        log::debug!(
            "step {i}: merged clusters {} and {}, loss {l}",
            a + 1,
            b + 1
        );
        partitions.push(partition.clone());
        losses.push(l);
        taus.push(est);
        block_counts.push(blocks.len());
    }

    let alphas = alpha_values(&losses, &block_counts, p);
    Ok(PathResult {
        partitions,
        losses,
        alphas,
        taus,
        block_counts,
        w: w.value(),
        mode,
        p,
    })
}

fn solver_for<'a>(
    slot: &'a mut Option<SigmaSolver>,
    sigma: &SigmaEstimate,
    step: usize,
) -> Result<&'a SigmaSolver> {
    if slot.is_none() {
        *slot = Some(SigmaSolver::new(sigma).map_err(|e| e.at_step(step))?);
    }
    Ok(slot.as_ref().expect("just filled"))
}

/// Loss and `α` of a fixed partition, with the covariance averaged over its
/// cells and shrunk by `w`.
pub fn score_partition(
    tau_hat: &TauEstimate,
    sigma_hat: &SigmaEstimate,
    partition: &Partition,
    w: ShrinkageWeight,
) -> Result<(BlockTauEstimate, f64, f64)> {
    if partition.dim() != tau_hat.d {
        return Err(Error::arg(format!(
            "partition has dimension {}, tau has {}",
            partition.dim(),
            tau_hat.d
        )));
    }
    let blocks = BlockStructure::new(partition)?;
    let tilde = sigma_tilde(sigma_hat, &tau_hat.tau, &blocks, sigma_hat.mode())?;
    let est = project_with(&tau_hat.tau, &blocks)?;
    let l = if est.tau_tilde == tau_hat.tau {
        0.0
    } else {
        let solver = SigmaSolver::new(&shrink(&tilde, w))?;
        loss_with(&solver, &est.tau_tilde, &tau_hat.tau)
    };
    let alpha = alpha_values(&[l], &[blocks.len()], blocks.p())[0];
    Ok((est, l, alpha))
}

/// Block-space view of the current step used to score merges.
struct Scorer {
    means: Vec<f64>,
    sums: Vec<f64>,
    sizes: Vec<f64>,
    g: Vec<f64>,
    q: QuadForm,
}

enum QuadForm {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

impl QuadForm {
    fn entry(&self, a: usize, b: usize) -> f64 {
        match self {
            QuadForm::Diagonal(q) => {
                if a == b {
                    q[a]
                } else {
                    0.0
                }
            }
            QuadForm::Dense(q) => q[(a, b)],
        }
    }
}

impl Scorer {
    fn new(blocks: &BlockStructure, tau: &[f64], solver: &SigmaSolver) -> Self {
        let nl = blocks.len();
        let labels = blocks.block_labels();
        let mut sums = vec![0.0; nl];
        let mut sizes = vec![0.0; nl];
        for (r, &l) in labels.iter().enumerate() {
            sums[l] += tau[r];
            sizes[l] += 1.0;
        }
        let means: Vec<f64> = sums.iter().zip(&sizes).map(|(s, n)| s / n).collect();
        let mut u = vec![0.0; nl];
        let q = match solver.diagonal_factor() {
            Some(diag) => {
                let mut q = vec![0.0; nl];
                for (r, &l) in labels.iter().enumerate() {
                    q[l] += 1.0 / diag[r];
                    u[l] += tau[r] / diag[r];
                }
                QuadForm::Diagonal(q)
            }
            None => {
                let m = solver.inverse();
                let p = labels.len();
                // aggregate columns into blocks, then rows
                let mut cols = DMatrix::<f64>::zeros(p, nl);
                for r in 0..p {
                    for s in 0..p {
                        cols[(r, labels[s])] += m[(r, s)];
                    }
                }
                let mut q = DMatrix::zeros(nl, nl);
                for r in 0..p {
                    let lr = labels[r];
                    for l in 0..nl {
                        q[(lr, l)] += cols[(r, l)];
                    }
                }
                let mt = &m * nalgebra::DVector::from_column_slice(tau);
                for r in 0..p {
                    u[labels[r]] += mt[r];
                }
                QuadForm::Dense(q)
            }
        };
        let g = (0..nl)
            .map(|a| {
                let qm: f64 = match &q {
                    QuadForm::Diagonal(q) => q[a] * means[a],
                    QuadForm::Dense(q) => (0..nl).map(|b| q[(a, b)] * means[b]).sum(),
                };
                qm - u[a]
            })
            .collect();
        Self {
            means,
            sums,
            sizes,
            g,
            q,
        }
    }

    /// Loss change of merging clusters `a < b`.
    fn merge_delta(&self, blocks: &BlockStructure, k: usize, a: usize, b: usize) -> f64 {
        let block = |x: usize, y: usize| blocks.block_index(x.min(y), x.max(y));
        let mut groups: Vec<Vec<usize>> = Vec::with_capacity(k - 1);
        groups.push(
            [block(a, a), block(a, b), block(b, b)]
                .into_iter()
                .flatten()
                .collect(),
        );
        for c in (0..k).filter(|&c| c != a && c != b) {
            groups.push([block(a, c), block(b, c)].into_iter().flatten().collect());
        }
        let mut idx = Vec::with_capacity(2 * k + 1);
        let mut delta = Vec::with_capacity(2 * k + 1);
        for group in &groups {
            let s: f64 = group.iter().map(|&l| self.sums[l]).sum();
            let n: f64 = group.iter().map(|&l| self.sizes[l]).sum();
            let mean = s / n;
            for &l in group {
                idx.push(l);
                delta.push(mean - self.means[l]);
            }
        }
        let mut total = 0.0;
        for (x, &lx) in idx.iter().enumerate() {
            total += 2.0 * self.g[lx] * delta[x];
            match &self.q {
                QuadForm::Diagonal(_) => total += self.q.entry(lx, lx) * delta[x] * delta[x],
                QuadForm::Dense(_) => {
                    for (y, &ly) in idx.iter().enumerate() {
                        total += self.q.entry(lx, ly) * delta[x] * delta[y];
                    }
                }
            }
        }
        total
    }
}

fn best_merge(blocks: &BlockStructure, tau: &[f64], solver: &SigmaSolver) -> (usize, usize) {
    let k = blocks.partition().len();
    let scorer = Scorer::new(blocks, tau, solver);
    let candidates: Vec<(usize, usize)> = (0..k)
        .flat_map(|a| ((a + 1)..k).map(move |b| (a, b)))
        .collect();
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|&(a, b)| scorer.merge_delta(blocks, k, a, b))
        .collect();
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate() {
        // NaN scores never win
        if s < scores[best] || (scores[best].is_nan() && !s.is_nan()) {
            best = c;
        }
    }
    candidates[best]
}

/// Upper-tail chi-square probability of each step loss with `p - L_i` degrees of freedom.
pub fn alpha_values(losses: &[f64], block_counts: &[usize], p: usize) -> Vec<f64> {
    losses
        .iter()
        .zip(block_counts)
        .map(|(&l, &nl)| {
            let df = p - nl;
            if df == 0 || l <= ZERO_LOSS_TOL {
                1.0
            } else {
                chi_square_sf(l, df)
            }
        })
        .collect()
}

/// Coarsest step (fewest clusters) whose `α` reaches `level`.
///
/// This is a heuristic guide rather than a formal test; the singleton step,
/// whose `α` is 1 by convention, is the fallback.
pub fn select_structure(path: &PathResult, level: f64) -> Result<(Selection, &Partition)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::arg(format!(
            "alpha level must lie in (0, 1), got {level}"
        )));
    }
    let d = path.d();
    let i = (1..=d).find(|&i| path.alphas[d - i] >= level).unwrap_or(d);
    Ok((Selection { i }, &path.partitions[d - i]))
}

/// `P(χ²_df > x)`.
pub fn chi_square_sf(x: f64, df: usize) -> f64 {
    if !(x > 0.0) {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    statrs::function::gamma::gamma_ur(df as f64 / 2.0, x / 2.0)
}
