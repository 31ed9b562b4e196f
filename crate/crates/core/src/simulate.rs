//! Monte-Carlo studies on elliptical copulas with block-structured Kendall matrices.
//!
//! Random streams: every column of every replicate draws from its own
//! `ChaCha8` stream, seeded with the scenario seed and stream number
//! `(replicate << 32) | column`. Column `d` is reserved for the mixing
//! variable of Student-t draws. Results therefore do not depend on the
//! number of worker threads.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceMode, PluginCovariance, ShrinkageWeight};
use crate::error::{Error, Result};
use crate::kendall::{DataMatrix, RankedData, TauEstimate, TiePolicy};
use crate::pairs::PairIndex;
use crate::partition::Partition;
use crate::path::{build_path_from, score_partition, select_structure, PathResult};
use crate::trig::{asin_over_half_pi, sin_half_pi};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Family {
    Normal,
    /// Student t with `df` degrees of freedom; `df = 1` is the Cauchy copula.
    StudentT {
        df: f64,
    },
}

/// A simulation design: true Kendall matrix, its partition, and study settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub true_tau: Vec<Vec<f64>>,
    pub partition: Partition,
    pub family: Family,
    pub n: usize,
    pub replicates: usize,
    pub w: f64,
    pub alpha_levels: Vec<f64>,
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: CovarianceMode,
}

fn default_mode() -> CovarianceMode {
    CovarianceMode::Full
}

/// Validated scenario ready for sampling.
#[derive(Debug, Clone)]
pub struct CopulaSampler {
    d: usize,
    family: Family,
    chol: DMatrix<f64>,
    true_tau: Vec<f64>,
}

impl Scenario {
    /// Kendall matrix with value `value(k1, k2)` on every block of the partition.
    pub fn block_matrix(
        partition: &Partition,
        value: impl Fn(usize, usize) -> f64,
    ) -> Vec<Vec<f64>> {
        let d = partition.dim();
        (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        if i == j {
                            1.0
                        } else {
                            let (a, b) = (partition.label(i), partition.label(j));
                            value(a.min(b), a.max(b))
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn d(&self) -> usize {
        self.partition.dim()
    }

    pub fn sampler(&self) -> Result<CopulaSampler> {
        let d = self.d();
        if self.true_tau.len() != d || self.true_tau.iter().any(|row| row.len() != d) {
            return Err(Error::Validation(format!(
                "true_tau must be {d}x{d} to match the partition"
            )));
        }
        let t = DMatrix::from_fn(d, d, |i, j| self.true_tau[i][j]);
        let idx = PairIndex::new(d)?;
        for i in 0..d {
            if t[(i, i)] != 1.0 {
                return Err(Error::Validation(format!(
                    "true_tau diagonal entry {} is not 1",
                    i + 1
                )));
            }
        }
        let tau = idx.vectorize(&t)?;
        if let Some(r) = tau.iter().position(|v| !(v.abs() < 1.0)) {
            let (i, j) = idx.pair(r);
            return Err(Error::Validation(format!(
                "true_tau entry ({}, {}) must lie in (-1, 1)",
                i + 1,
                j + 1
            )));
        }
        let blocks = crate::partition::BlockStructure::new(&self.partition)?;
        let averaged = blocks.gamma_apply(&tau)?;
        if tau
            .iter()
            .zip(&averaged)
            .any(|(a, b)| (a - b).abs() > 1e-12)
        {
            return Err(Error::Validation(
                "true_tau is not constant on the blocks of the declared partition".into(),
            ));
        }
        if let Family::StudentT { df } = self.family {
            if !(df > 0.0 && df.is_finite()) {
                return Err(Error::Validation(format!(
                    "Student t df must be positive, got {df}"
                )));
            }
        }
        let mut rho = t.map(sin_half_pi);
        rho.fill_diagonal(1.0);
        let chol = rho
            .cholesky()
            .ok_or_else(|| {
                Error::Validation("sine-transformed true_tau is not positive definite".into())
            })?
            .l();
        Ok(CopulaSampler {
            d,
            family: self.family,
            chol,
            true_tau: tau,
        })
    }

    fn validate_study(&self) -> Result<(ShrinkageWeight, CopulaSampler)> {
        let w = ShrinkageWeight::new(self.w)?;
        if let Some(a) = self.alpha_levels.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(Error::arg(format!(
                "alpha level must lie in (0, 1), got {a}"
            )));
        }
        if self.n < 3 {
            return Err(Error::arg(format!("n must be at least 3, got {}", self.n)));
        }
        Ok((w, self.sampler()?))
    }
}

impl CopulaSampler {
    pub fn true_tau(&self) -> &[f64] {
        &self.true_tau
    }

    /// `n` draws for one replicate. Margins are left latent; only ranks matter downstream.
    pub fn sample(&self, n: usize, seed: u64, replicate: u64) -> Result<DataMatrix> {
        let d = self.d;
        let stream = |c: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((replicate << 32) | c as u64);
            rng
        };
        let z = DMatrix::from_columns(
            &(0..d)
                .map(|c| {
                    let mut rng = stream(c);
                    nalgebra::DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
                })
                .collect::<Vec<_>>(),
        );
        let mut x = z * self.chol.transpose();
        if let Family::StudentT { df } = self.family {
            let chi = ChiSquared::new(df).map_err(|e| Error::Validation(e.to_string()))?;
            let mut rng = stream(d);
            for r in 0..n {
                let scale = (chi.sample(&mut rng) / df).sqrt();
                x.row_mut(r).unscale_mut(scale);
            }
        }
        DataMatrix::new(x)
    }
}

pub fn sample_copula(scenario: &Scenario, n: usize, seed: u64) -> Result<DataMatrix> {
    scenario.sampler()?.sample(n, seed, 0)
}

fn squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn baseline_error(path: &PathResult, true_tau: &[f64]) -> Result<f64> {
    if true_tau.len() != path.p {
        return Err(Error::arg(format!(
            "true tau has length {}, path has p = {}",
            true_tau.len(),
            path.p
        )));
    }
    let tau_hat = &path.taus[0].tau_tilde;
    let den = squared_error(tau_hat, true_tau);
    if den == 0.0 {
        return Err(Error::Degenerate(
            "the empirical tau equals the true tau exactly".into(),
        ));
    }
    Ok(den)
}

/// Best error reduction over the path: `1 - min_j ||τ̃⁽ʲ⁾ - τ||² / ||τ̂ - τ||²`.
pub fn metric_nu2(path: &PathResult, true_tau: &[f64]) -> Result<f64> {
    let den = baseline_error(path, true_tau)?;
    let best = path
        .taus
        .iter()
        .map(|t| squared_error(&t.tau_tilde, true_tau))
        .fold(f64::INFINITY, f64::min);
    Ok(1.0 - best / den)
}

/// Error reduction of the step with `i` clusters.
pub fn metric_xi(path: &PathResult, selected: usize, true_tau: &[f64]) -> Result<f64> {
    let den = baseline_error(path, true_tau)?;
    let k = path.position(selected)?;
    Ok(1.0 - squared_error(&path.taus[k].tau_tilde, true_tau) / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub nu2: f64,
    /// One entry per alpha level.
    pub xi: Vec<f64>,
    pub selected: Vec<usize>,
    pub truth_on_path: bool,
    /// Loss and alpha of the true partition under the scenario's shrinkage.
    pub truth_loss: f64,
    pub truth_alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub replicates: usize,
    pub alpha_levels: Vec<f64>,
    pub nu2_mean: f64,
    pub xi_mean: Vec<f64>,
    pub truth_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub records: Vec<ReplicateRecord>,
    pub summary: StudySummary,
}

pub fn run_replicate(
    scenario: &Scenario,
    sampler: &CopulaSampler,
    w: ShrinkageWeight,
    replicate: usize,
) -> Result<ReplicateRecord> {
    let data = sampler.sample(scenario.n, scenario.seed, replicate as u64)?;
    let ranked = RankedData::new(&data, TiePolicy::Error)?;
    let plug = PluginCovariance::new(&ranked)?;
    let sigma_hat = plug.sigma_hat(scenario.mode)?;
    let tau_hat = TauEstimate {
        tau: plug.tau_hat().to_vec(),
        d: data.d(),
        n: data.n(),
    };
    let path = build_path_from(&tau_hat, &sigma_hat, w)?;
    let truth = sampler.true_tau();
    let nu2 = metric_nu2(&path, truth)?;
    let mut xi = Vec::with_capacity(scenario.alpha_levels.len());
    let mut selected = Vec::with_capacity(scenario.alpha_levels.len());
    for &level in &scenario.alpha_levels {
        let (sel, _) = select_structure(&path, level)?;
        xi.push(metric_xi(&path, sel.i, truth)?);
        selected.push(sel.i);
    }
    let truth_on_path = path.partitions.contains(&scenario.partition);
    let (_, truth_loss, truth_alpha) =
        score_partition(&tau_hat, &sigma_hat, &scenario.partition, w)?;
    Ok(ReplicateRecord {
        replicate,
        nu2,
        xi,
        selected,
        truth_on_path,
        truth_loss,
        truth_alpha,
    })
}

/// Runs all replicates in parallel; records come back in replicate order.
pub fn run_study(scenario: &Scenario) -> Result<StudyResult> {
    let (w, sampler) = scenario.validate_study()?;
    let records = (0..scenario.replicates)
        .into_par_iter()
        .map(|r| run_replicate(scenario, &sampler, w, r))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&records, &scenario.alpha_levels);
    Ok(StudyResult { records, summary })
}

pub fn summarize(records: &[ReplicateRecord], alpha_levels: &[f64]) -> StudySummary {
    let m = records.len();
    let mean = |f: &dyn Fn(&ReplicateRecord) -> f64| -> f64 {
        if m == 0 {
            f64::NAN
        } else {
            records.iter().map(f).sum::<f64>() / m as f64
        }
    };
    StudySummary {
        replicates: m,
        alpha_levels: alpha_levels.to_vec(),
        nu2_mean: mean(&|r| r.nu2),
        xi_mean: (0..alpha_levels.len())
            .map(|k| mean(&|r| r.xi[k]))
            .collect(),
        truth_rate: mean(&|r| if r.truth_on_path { 1.0 } else { 0.0 }),
    }
}

/// Names of the packaged scenarios.
pub const PRESETS: &[&str] = &[
    "blocks10",
    "blocks10-cauchy",
    "calibration6",
    "separated20",
    "weak20",
    "toeplitz10",
    "scale107",
];

/// Packaged scenarios. They are qualitative designs (well separated blocks,
/// weakly separated blocks, an unstructured Toeplitz matrix), not numerical
/// reproductions of any published matrices.
pub fn preset(name: &str) -> Option<Scenario> {
    let base = |name: &str, partition: Partition, true_tau: Vec<Vec<f64>>| Scenario {
        name: name.to_string(),
        true_tau,
        partition,
        family: Family::Normal,
        n: 250,
        replicates: 100,
        w: 0.75,
        alpha_levels: vec![0.01, 0.05, 0.1],
        seed: 20_190_501,
        mode: CovarianceMode::Full,
    };
    let contiguous = |sizes: &[usize]| {
        let mut start = 0;
        let clusters = sizes
            .iter()
            .map(|&s| {
                let c: Vec<usize> = (start..start + s).collect();
                start += s;
                c
            })
            .collect();
        Partition::new(sizes.iter().sum(), clusters).expect("valid sizes")
    };
    match name {
        "blocks10" | "blocks10-cauchy" => {
            let g = contiguous(&[4, 3, 3]);
            let within = [0.4, 0.35, 0.3];
            let between = [[0.0, 0.25, 0.15], [0.25, 0.0, 0.2], [0.15, 0.2, 0.0]];
            let t =
                Scenario::block_matrix(&g, |a, b| if a == b { within[a] } else { between[a][b] });
            let mut s = base(name, g, t);
            if name == "blocks10-cauchy" {
                s.family = Family::StudentT { df: 1.0 };
            }
            Some(s)
        }
        "calibration6" => {
            let g = contiguous(&[3, 3]);
            let t = Scenario::block_matrix(&g, |a, b| match (a, b) {
                (0, 0) => 0.5,
                (1, 1) => 0.4,
                _ => 0.2,
            });
            let mut s = base(name, g, t);
            s.n = 1000;
            s.replicates = 500;
            s.w = 0.0;
            Some(s)
        }
        "separated20" | "weak20" => {
            let g = contiguous(&[5, 5, 5, 5]);
            let (within, between) = if name == "separated20" {
                ([0.6, 0.5, 0.45, 0.4], 0.1)
            } else {
                ([0.35, 0.32, 0.3, 0.28], 0.22)
            };
            let t = Scenario::block_matrix(&g, |a, b| if a == b { within[a] } else { between });
            Some(base(name, g, t))
        }
        "toeplitz10" => {
            let d = 10;
            let g = Partition::singletons(d);
            let t = (0..d)
                .map(|i| {
                    (0..d)
                        .map(|j| {
                            let rho: f64 = 0.7f64.powi((i as i32 - j as i32).abs());
                            if i == j {
                                1.0
                            } else {
                                asin_over_half_pi(rho)
                            }
                        })
                        .collect()
                })
                .collect();
            Some(base(name, g, t))
        }
        "scale107" => {
            let sizes = [15, 14, 13, 12, 11, 10, 9, 9, 8, 6];
            let g = contiguous(&sizes);
            let t = Scenario::block_matrix(&g, |a, b| {
                if a == b {
                    0.25 + 0.02 * a as f64
                } else {
                    0.1 + 0.01 * ((a + b) % 5) as f64
                }
            });
            let mut s = base(name, g, t);
            s.n = 187;
            s.replicates = 1;
            s.w = 1.0;
            s.mode = CovarianceMode::Diagonal;
            Some(s)
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for name in PRESETS {
            let s = preset(name).unwrap();
            s.sampler().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(preset("nope").is_none());
    }

    #[test]
    fn deterministic_sampling() {
        let s = preset("blocks10").unwrap();
        let a = sample_copula(&s, 50, 7).unwrap();
        let b = sample_copula(&s, 50, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_copula(&s, 50, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_unstructured_truth() {
        let mut s = preset("blocks10").unwrap();
        s.true_tau[0][1] = 0.55;
        s.true_tau[1][0] = 0.55;
        assert!(matches!(s.sampler(), Err(Error::Validation(_))));
        let mut s = preset("blocks10").unwrap();
        s.true_tau = Scenario::block_matrix(&s.partition, |a, b| if a == b { 0.9 } else { -0.9 });
        assert!(matches!(s.sampler(), Err(Error::Validation(_))));
    }
}
