use std::path::{Path, PathBuf};

use blockcorr::estimator::block_average_matrix;
use blockcorr::{
    inverse_sine_transform, precision_matrix, sine_transform, CorrelationMatrix, Partition,
};
use clap::Args;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::fit::correlation_error;
use crate::input::{delimiter_byte, open, read_table, read_to_string};
use crate::report::{matrix, write_json, Metadata, Num, SCHEMA_VERSION};

#[derive(Debug, Args)]
pub struct TransformArgs {
    /// Square matrix as JSON (array of rows) or CSV; the format follows the extension.
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Clusters as 1-based JSON, e.g. `[[1,2],[3]]`; singletons when omitted.
    #[arg(long)]
    pub partition: Option<String>,
    /// Also return the block-averaged precision matrix.
    #[arg(long)]
    pub precision: bool,
    #[arg(long)]
    pub shrink_correlation: bool,
    /// Input is a linear correlation matrix; return Kendall's tau.
    #[arg(long)]
    pub inverse: bool,
    #[arg(long, default_value = ",")]
    pub delimiter: String,
}

#[derive(Debug, Serialize)]
struct TransformReport {
    schema_version: &'static str,
    metadata: Metadata,
    partition: Vec<Vec<usize>>,
    tau: Vec<Vec<Num>>,
    correlation: Vec<Vec<Num>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    precision: Option<Vec<Vec<Num>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    correlation_shrinkage: Option<Num>,
}

fn read_matrix(path: &Path, delimiter: &str) -> CliResult<DMatrix<f64>> {
    let json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let rows: Vec<Vec<f64>> = if json {
        serde_json::from_str(&read_to_string(path)?)
            .map_err(|e| CliError::parse(Some(e.line() as u64), e.to_string()))?
    } else {
        read_table(open(path)?, delimiter_byte(delimiter)?, false)?.rows
    };
    let d = rows.len();
    if d < 2 || rows.iter().any(|r| r.len() != d) {
        return Err(CliError::parse(
            None,
            "input must be a square matrix with at least 2 rows",
        ));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

fn parse_partition(text: Option<&str>, d: usize) -> CliResult<Partition> {
    match text {
        None => Ok(Partition::singletons(d)),
        Some(t) => {
            let clusters: Vec<Vec<usize>> =
                serde_json::from_str(t).map_err(|e| CliError::Config(format!("partition: {e}")))?;
            let g = Partition::from_one_based(clusters)?;
            if g.dim() != d {
                return Err(CliError::Config(format!(
                    "partition covers {} variables, matrix has {d}",
                    g.dim()
                )));
            }
            Ok(g)
        }
    }
}

pub fn run(args: &TransformArgs) -> CliResult<()> {
    let m = read_matrix(&args.input, &args.delimiter)?;
    let g = parse_partition(args.partition.as_deref(), m.nrows())?;
    let (tau, p) = if args.inverse {
        let p = CorrelationMatrix::new(block_average_matrix(&m, &g)?)?;
        (inverse_sine_transform(&p), p)
    } else {
        let tau = block_average_matrix(&m, &g)?;
        let p = sine_transform(&tau)?;
        (tau, p)
    };
    let omega = if args.precision {
        Some(precision_matrix(&p, &g, args.shrink_correlation).map_err(correlation_error)?)
    } else {
        None
    };
    let report = TransformReport {
        schema_version: SCHEMA_VERSION,
        metadata: Metadata::new("transform", Some(&args.input)),
        partition: g.to_one_based(),
        tau: matrix(&tau),
        correlation: matrix(p.values()),
        correlation_shrinkage: omega.as_ref().and_then(|o| o.shrinkage).map(Num),
        precision: omega.map(|o| matrix(&o.omega)),
    };
    write_json(&report, args.output.as_deref())
}
