//! Detection of block-exchangeable structure in Kendall rank correlation matrices.
//!
//! The crate estimates the empirical Kendall matrix and the covariance of its
//! vectorized upper triangle, builds an agglomerative path of nested
//! partitions of the variables, scores each step with a generalized
//! least-squares loss and a chi-square criterion, and returns block-averaged
//! estimates of the rank and latent Pearson correlation matrices.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covariance;
pub mod error;
pub mod estimator;
pub mod kendall;
pub mod pairs;
pub mod partition;
pub mod path;
pub mod simulate;
#[doc(hidden)]
pub mod testing;
mod trig;

pub use covariance::{
    shrink, sigma_hat, sigma_hat_entry, sigma_tilde, solve_sigma, CovarianceMode, PluginCovariance,
    ShrinkageWeight, SigmaEstimate, SigmaKind, SigmaSolver, ThetaCounts,
};
pub use error::{Error, Result};
pub use estimator::{
    inverse_sine_transform, loss, precision_matrix, project_tau, sine_transform, BlockTauEstimate,
    CorrelationMatrix, PrecisionEstimate,
};
pub use kendall::{
    concordance_indicator, kendall_tau, kendall_tau_naive, ConcordanceIndicator, DataMatrix,
    RankedData, TauEstimate, TiePolicy,
};
pub use pairs::PairIndex;
pub use partition::{BlockStructure, CellKey, Partition, VarphiKey};
pub use path::{
    alpha_values, build_path, build_path_from, chi_square_sf, score_partition, select_structure,
    PathResult, PathStep, Selection,
};
pub use simulate::{
    metric_nu2, metric_xi, preset, run_study, sample_copula, Family, ReplicateRecord, Scenario,
    StudyResult, StudySummary,
};
