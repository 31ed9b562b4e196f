use std::io::{BufWriter, Write};
use std::path::PathBuf;

use blockcorr::pairs::pair_count;
use blockcorr::{
    build_path_from, precision_matrix, select_structure, sigma_tilde, sine_transform,
    BlockStructure, CovarianceMode, DataMatrix, PathResult, PluginCovariance, RankedData,
    ShrinkageWeight, TauEstimate, TiePolicy,
};
use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::input::{delimiter_byte, open, read_table};
use crate::report::{matrix, write_json, Metadata, Num, SCHEMA_VERSION};

/// Largest number of pairs for which `auto` picks the full covariance.
pub const AUTO_FULL_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Full,
    Diag,
    Auto,
}

impl ModeArg {
    pub fn resolve(self, p: usize, w: f64) -> CovarianceMode {
        match self {
            _ if w == 1.0 => CovarianceMode::Diagonal,
            ModeArg::Full => CovarianceMode::Full,
            ModeArg::Diag => CovarianceMode::Diagonal,
            ModeArg::Auto if p <= AUTO_FULL_LIMIT => CovarianceMode::Full,
            ModeArg::Auto => CovarianceMode::Diagonal,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV file with one observation per row and one variable per column.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Report destination; stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Field delimiter, a single character or `tab`.
    #[arg(long, default_value = ",")]
    pub delimiter: String,
    /// Treat the first row as column names.
    #[arg(long)]
    pub header: bool,
    /// Shrinkage weight w in [0, 1] toward the diagonal of the structured covariance.
    #[arg(long, default_value_t = 0.0)]
    pub shrinkage: f64,
    /// Level used to select a structure from the path.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
    pub mode: ModeArg,
    /// Include the Kendall, linear correlation and precision matrices.
    #[arg(long)]
    pub emit_matrices: bool,
    /// Shrink the correlation matrix toward the identity when it cannot be inverted.
    #[arg(long)]
    pub shrink_correlation: bool,
    /// Write the structured covariance of the selected step as a binary lower triangle.
    #[arg(long)]
    pub dump_sigma: Option<PathBuf>,
    /// Reserved; the fit is deterministic.
    #[arg(long, hide = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize)]
struct Settings {
    shrinkage: Num,
    alpha: Num,
    mode_requested: ModeArg,
    mode: CovarianceMode,
    delimiter: String,
    header: bool,
}

#[derive(Debug, Serialize)]
struct DataSummary {
    n: usize,
    d: usize,
    pairs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    columns: Option<Vec<String>>,
}

#[derive(Debug, Serialize)]
struct TauSummary {
    min: Num,
    max: Num,
    mean: Num,
    mean_abs: Num,
}

#[derive(Debug, Serialize)]
struct StepReport {
    /// Number of clusters.
    i: usize,
    blocks: usize,
    df: usize,
    loss: Num,
    alpha: Num,
    partition: Vec<Vec<usize>>,
}

#[derive(Debug, Serialize)]
struct Selected {
    level: Num,
    #[serde(flatten)]
    step: StepReport,
}

#[derive(Debug, Serialize)]
struct BlockValue {
    clusters: [usize; 2],
    pairs: usize,
    value: Num,
}

#[derive(Debug, Serialize)]
struct Matrices {
    tau_hat: Vec<Vec<Num>>,
    tau_tilde: Vec<Vec<Num>>,
    correlation: Vec<Vec<Num>>,
    precision: Vec<Vec<Num>>,
    correlation_shrinkage: Option<Num>,
}

#[derive(Debug, Serialize)]
struct FitReport {
    schema_version: &'static str,
    metadata: Metadata,
    settings: Settings,
    data: DataSummary,
    tau_hat: TauSummary,
    path: Vec<StepReport>,
    selected: Selected,
    tau_tilde: Vec<BlockValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    matrices: Option<Matrices>,
}

pub fn run(args: &FitArgs) -> CliResult<()> {
    let w = ShrinkageWeight::new(args.shrinkage)?;
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::Config(format!(
            "alpha must lie in (0, 1), got {}",
            args.alpha
        )));
    }
    let table = read_table(
        open(&args.input)?,
        delimiter_byte(&args.delimiter)?,
        args.header,
    )?;
    let d = table.rows.first().map_or(0, Vec::len);
    if table.rows.len() < 3 || d < 2 {
        return Err(CliError::parse(
            None,
            format!(
                "need at least 3 rows and 2 columns, found {} x {d}",
                table.rows.len()
            ),
        ));
    }
    let data = DataMatrix::from_rows(&table.rows)?;
    let p = pair_count(d);
    let mode = args.mode.resolve(p, w.value());
    log::info!("n = {}, d = {d}, p = {p}, mode = {mode:?}", data.n());

    let ranked = RankedData::new(&data, TiePolicy::Error)?;
    let plug = PluginCovariance::new(&ranked)?;
    if args.dump_sigma.is_some() && mode != CovarianceMode::Full {
        return Err(CliError::Config(
            "--dump-sigma needs the full covariance; use --mode full and w < 1".into(),
        ));
    }
    let sigma_hat = plug.sigma_hat(mode)?;
    let tau = TauEstimate {
        tau: plug.tau_hat().to_vec(),
        d,
        n: data.n(),
    };
    let path = build_path_from(&tau, &sigma_hat, w)?;
    let (selection, _) = select_structure(&path, args.alpha)?;
    let k = path.position(selection.i)?;
    if let Some(out) = &args.dump_sigma {
        let blocks = BlockStructure::new(&path.partitions[k])?;
        let tilde = sigma_tilde(&sigma_hat, &tau.tau, &blocks, mode)?;
        dump_sigma(&tilde.to_dense(), out)?;
    }

    let matrices = if args.emit_matrices {
        Some(matrices(&tau, &path, k, args.shrink_correlation)?)
    } else {
        None
    };
    let report = FitReport {
        schema_version: SCHEMA_VERSION,
        metadata: Metadata::new("fit", Some(&args.input)),
        settings: Settings {
            shrinkage: Num(w.value()),
            alpha: Num(args.alpha),
            mode_requested: args.mode,
            mode,
            delimiter: args.delimiter.clone(),
            header: args.header,
        },
        data: DataSummary {
            n: data.n(),
            d,
            pairs: p,
            columns: table.header,
        },
        tau_hat: summarize_tau(&tau.tau),
        path: (0..d).map(|k| step_report(&path, k)).collect(),
        selected: Selected {
            level: Num(args.alpha),
            step: step_report(&path, k),
        },
        tau_tilde: block_values(&path, k)?,
        matrices,
    };
    write_json(&report, args.output.as_deref())
}

fn summarize_tau(tau: &[f64]) -> TauSummary {
    let m = tau.len() as f64;
    TauSummary {
        min: Num(tau.iter().copied().fold(f64::INFINITY, f64::min)),
        max: Num(tau.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        mean: Num(tau.iter().sum::<f64>() / m),
        mean_abs: Num(tau.iter().map(|t| t.abs()).sum::<f64>() / m),
    }
}

fn step_report(path: &PathResult, k: usize) -> StepReport {
    let g = &path.partitions[k];
    StepReport {
        i: g.len(),
        blocks: path.block_counts[k],
        df: path.p - path.block_counts[k],
        loss: Num(path.losses[k]),
        alpha: Num(path.alphas[k]),
        partition: g.to_one_based(),
    }
}

fn block_values(path: &PathResult, k: usize) -> CliResult<Vec<BlockValue>> {
    let blocks = BlockStructure::new(&path.partitions[k])?;
    let sizes = blocks.block_sizes();
    Ok(path.taus[k]
        .per_block_values
        .iter()
        .enumerate()
        .map(|(l, &v)| {
            let (a, b) = blocks.block_key(l);
            BlockValue {
                clusters: [a + 1, b + 1],
                pairs: sizes[l],
                value: Num(v),
            }
        })
        .collect())
}

fn matrices(tau: &TauEstimate, path: &PathResult, k: usize, shrink: bool) -> CliResult<Matrices> {
    let t = path.taus[k].matrix();
    let p = sine_transform(&t)?;
    let omega = precision_matrix(&p, &path.partitions[k], shrink).map_err(correlation_error)?;
    Ok(Matrices {
        tau_hat: matrix(&tau.matrix()),
        tau_tilde: matrix(&t),
        correlation: matrix(p.values()),
        precision: matrix(&omega.omega),
        correlation_shrinkage: omega.shrinkage.map(Num),
    })
}

pub fn correlation_error(e: blockcorr::Error) -> CliError {
    match e {
        blockcorr::Error::Singular { reason, .. } => CliError::Correlation(reason),
        other => other.into(),
    }
}

fn dump_sigma(m: &nalgebra::DMatrix<f64>, path: &std::path::Path) -> CliResult<()> {
    let file =
        std::fs::File::create(path).map_err(|e| CliError::write(path.display().to_string(), e))?;
    let mut out = BufWriter::new(file);
    blockcorr::covariance::write_sigma_binary(m, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| CliError::write(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auto_mode_threshold() {
        assert_eq!(ModeArg::Auto.resolve(2000, 0.5), CovarianceMode::Full);
        assert_eq!(ModeArg::Auto.resolve(2001, 0.5), CovarianceMode::Diagonal);
        assert_eq!(ModeArg::Full.resolve(5, 1.0), CovarianceMode::Diagonal);
        assert_eq!(ModeArg::Diag.resolve(5, 0.0), CovarianceMode::Diagonal);
    }
}
