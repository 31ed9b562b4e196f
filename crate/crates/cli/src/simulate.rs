use std::path::PathBuf;

use blockcorr::simulate::PRESETS;
use blockcorr::{preset, run_study, ReplicateRecord, Scenario, StudySummary};
use clap::Args;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::input::read_to_string;
use crate::report::{nums, write_bytes, write_json, Metadata, Num, SCHEMA_VERSION};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON file.
    #[arg(
        long,
        short,
        conflicts_with = "preset",
        required_unless_present = "preset"
    )]
    pub input: Option<PathBuf>,
    /// Packaged scenario name.
    #[arg(long)]
    pub preset: Option<String>,
    /// JSON-lines destination, one record per replicate; stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Write averages over replicates to this file.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Sample size per replicate.
    #[arg(long = "sample-size")]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub shrinkage: Option<f64>,
}

#[derive(Debug, Serialize)]
struct RecordLine {
    replicate: usize,
    nu2: Num,
    xi: Vec<Num>,
    selected: Vec<usize>,
    truth_on_path: bool,
    truth_loss: Num,
    truth_alpha: Num,
}

impl From<&ReplicateRecord> for RecordLine {
    fn from(r: &ReplicateRecord) -> Self {
        RecordLine {
            replicate: r.replicate,
            nu2: Num(r.nu2),
            xi: nums(&r.xi),
            selected: r.selected.clone(),
            truth_on_path: r.truth_on_path,
            truth_loss: Num(r.truth_loss),
            truth_alpha: Num(r.truth_alpha),
        }
    }
}

#[derive(Debug, Serialize)]
struct SummaryReport {
    schema_version: &'static str,
    metadata: Metadata,
    scenario: String,
    replicates: usize,
    alpha_levels: Vec<Num>,
    nu2_mean: Num,
    xi_mean: Vec<Num>,
    truth_rate: Num,
}

pub fn load_scenario(args: &SimulateArgs) -> CliResult<Scenario> {
    let mut s = match (&args.input, &args.preset) {
        (Some(path), _) => serde_json::from_str::<Scenario>(&read_to_string(path)?)
            .map_err(|e| CliError::parse(Some(e.line() as u64), e.to_string()))?,
        (None, Some(name)) => preset(name).ok_or_else(|| {
            CliError::Config(format!(
                "unknown preset {name:?}; available: {}",
                PRESETS.join(", ")
            ))
        })?,
        (None, None) => {
            return Err(CliError::Config(
                "a scenario file or preset is required".into(),
            ))
        }
    };
    if let Some(r) = args.replicates {
        s.replicates = r;
    }
    if let Some(n) = args.n {
        s.n = n;
    }
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if let Some(w) = args.shrinkage {
        s.w = w;
    }
    Ok(s)
}

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    let scenario = load_scenario(args)?;
    log::info!(
        "scenario {:?}: d = {}, n = {}, {} replicates",
        scenario.name,
        scenario.d(),
        scenario.n,
        scenario.replicates
    );
    let result = run_study(&scenario)?;
    let mut out = Vec::new();
    for r in &result.records {
        serde_json::to_writer(&mut out, &RecordLine::from(r))
            .map_err(|e| CliError::write("record", e.into()))?;
        out.push(b'\n');
    }
    write_bytes(&out, args.output.as_deref())?;
    if let Some(path) = &args.summary {
        write_json(
            &summary_report(&scenario, args, &result.summary),
            Some(path),
        )?;
    }
    Ok(())
}

fn summary_report(s: &Scenario, args: &SimulateArgs, m: &StudySummary) -> SummaryReport {
    SummaryReport {
        schema_version: SCHEMA_VERSION,
        metadata: Metadata::new("simulate", args.input.as_deref()),
        scenario: s.name.clone(),
        replicates: m.replicates,
        alpha_levels: nums(&m.alpha_levels),
        nu2_mean: Num(m.nu2_mean),
        xi_mean: nums(&m.xi_mean),
        truth_rate: Num(m.truth_rate),
    }
}
