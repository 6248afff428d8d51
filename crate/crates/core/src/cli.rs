//! Command-line front end.
//!
//! Results go to stdout as JSON lines, diagnostics to stderr. Exit codes:
//! 0 success, 1 runtime or I/O failure, 2 configuration error, 3 a
//! benchmark completed but some cells failed.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::benchmark::{run_study, write_study, Analysis, MethodId, StudyConfig};
use crate::classical::{
    calibrate_four_point, calibrate_zfs, enumerate_four_point_patterns, estimate_fit,
    estimate_four_point, FourPointCalibration, ZfsCalibration, DEFAULT_PATTERN_INDEX,
    PATTERN_CENTER_MHZ,
};
use crate::error::{Error, Result};
use crate::gpr::{train_subsampled, GprModel};
use crate::spectrum::{PointSelection, Spectrum};
use crate::synth::{write_dataset, ManifestEntry, ScenarioConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

/// One JSON document per run. A dataset manifest is also a valid config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: Option<u32>,
    pub scenario: ScenarioConfig,
    pub study: StudyConfig,
    /// Present in manifests; ignored here.
    pub files: Vec<ManifestEntry>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.study.validate()
    }
}

#[derive(Debug, Parser)]
#[command(name = "ndthermo", version, about = "NV-center ODMR thermometry toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (CSV spectra plus manifest.json).
    Simulate(SimulateArgs),
    /// Train a GPR model on labeled spectra.
    TrainGpr(TrainArgs),
    /// Build a 4-point calibration from labeled spectra.
    #[command(name = "calibrate-4point")]
    CalibrateFourPoint(CalibrateFourPointArgs),
    /// Fit labeled spectra and regress D on T.
    CalibrateFit(CalibrateFitArgs),
    /// Estimate the temperature of one spectrum.
    Estimate(EstimateArgs),
    /// Run the seed-replicated benchmark study.
    Benchmark(BenchmarkArgs),
    /// Print the 15 four-point patterns.
    Patterns,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Fourpoint,
    Fit,
    Gpr,
}

impl From<MethodArg> for MethodId {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Fourpoint => MethodId::FourPoint,
            MethodArg::Fit => MethodId::LorentzFit,
            MethodArg::Gpr => MethodId::Gpr,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Output model file (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Keep this many equally spaced points (4 selects the default pattern).
    #[arg(long, conflicts_with = "pattern")]
    pub n_p: Option<usize>,
    /// Keep the four frequencies of this table pattern (1-15).
    #[arg(long)]
    pub pattern: Option<usize>,
    /// Labeled spectrum CSV files.
    #[arg(required = true)]
    pub spectra: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateFourPointArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PATTERN_INDEX)]
    pub pattern: usize,
    #[arg(required = true)]
    pub spectra: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateFitArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(required = true)]
    pub spectra: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// GPR model or calibration file written by the matching subcommand.
    #[arg(long)]
    pub model: PathBuf,
    pub spectrum: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Restrict the N_p sweep to one method.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
}

/// Error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: Error,
}

impl Failure {
    fn config(error: Error) -> Self {
        Failure {
            code: EXIT_CONFIG,
            error,
        }
    }
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            error,
        }
    }
}

type CliResult = std::result::Result<i32, Failure>;

fn load_config(path: Option<&Path>, seed: Option<u64>) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).map_err(Failure::config)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.scenario.noise.seed = s;
    }
    cfg.validate().map_err(Failure::config)?;
    Ok(cfg)
}

fn read_spectra(paths: &[PathBuf]) -> Result<Vec<Spectrum>> {
    paths.iter().map(|p| Spectrum::read_csv(p)).collect()
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn emit(out: &mut dyn std::io::Write, value: serde_json::Value) -> Result<()> {
    writeln!(out, "{value}").map_err(|e| Error::io("<stdout>", e))
}

/// The table patterns as printed by `patterns`.
pub fn patterns_json() -> serde_json::Value {
    let rows: Vec<serde_json::Value> = enumerate_four_point_patterns()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let offsets: Vec<i64> = p
                .offsets_mhz(PATTERN_CENTER_MHZ)
                .iter()
                .map(|o| o.round() as i64)
                .collect();
            json!({
                "index": i + 1,
                "offsets_mhz": offsets,
                "frequencies_mhz": p.frequencies_mhz(),
            })
        })
        .collect();
    serde_json::Value::Array(rows)
}

fn simulate(a: &SimulateArgs, out: &mut dyn std::io::Write) -> CliResult {
    let cfg = load_config(a.config.as_deref(), a.seed)?;
    let manifest = write_dataset(&cfg.scenario, &a.out)?;
    let n = cfg.scenario.temperatures_k.len() * cfg.scenario.replicates;
    emit(out, json!({ "manifest": manifest, "spectra": n, "seed": cfg.scenario.noise.seed }))?;
    Ok(EXIT_OK)
}

fn train_gpr(a: &TrainArgs, out: &mut dyn std::io::Write) -> CliResult {
    let selection = match (a.n_p, a.pattern) {
        (Some(n), _) => Analysis::Points(n).selection(),
        (None, Some(i)) => Analysis::table_pattern(i).map_err(Failure::config)?.selection(),
        (None, None) => PointSelection::All,
    };
    let spectra = read_spectra(&a.spectra)?;
    let model = train_subsampled(&spectra, &selection, None)?;
    model.save(&a.out)?;
    eprintln!(
        "trained GPR on {} spectra x {} points, LML {:.4}",
        model.n_train(),
        model.dim(),
        model.report.log_marginal_likelihood
    );
    emit(
        out,
        json!({
            "model": a.out,
            "n_train": model.n_train(),
            "n_p": model.dim(),
            "hyperparams": model.hyper,
            "log_marginal_likelihood": model.report.log_marginal_likelihood,
        }),
    )?;
    Ok(EXIT_OK)
}

fn calibrate_4point(a: &CalibrateFourPointArgs, out: &mut dyn std::io::Write) -> CliResult {
    let Analysis::Pattern { pattern, .. } =
        Analysis::table_pattern(a.pattern).map_err(Failure::config)?
    else {
        unreachable!("table_pattern builds a pattern")
    };
    let spectra = read_spectra(&a.spectra)?;
    let cal = calibrate_four_point(&spectra, &pattern)?;
    write_json(&cal, &a.out)?;
    emit(
        out,
        json!({
            "calibration": a.out,
            "pattern_index": a.pattern,
            "alpha_khz_per_k": cal.cal.alpha_khz_per_k,
            "t_ref_k": cal.t_ref_k,
        }),
    )?;
    Ok(EXIT_OK)
}

fn calibrate_fit(a: &CalibrateFitArgs, out: &mut dyn std::io::Write) -> CliResult {
    let spectra = read_spectra(&a.spectra)?;
    let zfs = calibrate_zfs(&spectra)?;
    write_json(&zfs, &a.out)?;
    emit(
        out,
        json!({
            "calibration": a.out,
            "alpha_khz_per_k": zfs.cal.alpha_khz_per_k,
            "alpha_std_error_khz_per_k": zfs.alpha_std_error_khz_per_k,
            "t0_k": zfs.cal.t0_k,
            "d_t0_mhz": zfs.cal.d_t0_mhz,
        }),
    )?;
    Ok(EXIT_OK)
}

fn estimate(a: &EstimateArgs, out: &mut dyn std::io::Write) -> CliResult {
    let s = Spectrum::read_csv(&a.spectrum)?;
    let method = MethodId::from(a.method);
    let (t, std_k) = match method {
        MethodId::Gpr => {
            let p = GprModel::load(&a.model)?.predict(&s)?;
            (p.mean_k, Some(p.std_k))
        }
        MethodId::FourPoint => {
            let cal: FourPointCalibration = read_json(&a.model)?;
            (estimate_four_point(&cal, &s)?, None)
        }
        MethodId::LorentzFit => {
            let zfs: ZfsCalibration = read_json(&a.model)?;
            (estimate_fit(&zfs.cal, &s)?, None)
        }
    };
    let mut line = json!({ "method": method, "temperature_k": t });
    if let Some(sd) = std_k {
        line["std_k"] = json!(sd);
    }
    emit(out, line)?;
    Ok(EXIT_OK)
}

fn benchmark(a: &BenchmarkArgs, out: &mut dyn std::io::Write) -> CliResult {
    let mut cfg = load_config(a.config.as_deref(), a.seed)?;
    if let Some(m) = a.method {
        cfg.study.methods = vec![m.into()];
    }
    let report = run_study(&cfg.scenario, &cfg.study)?;
    let paths = write_study(&report, &a.out)?;
    let failed = report.failed_cells();
    for row in &report.np_summary {
        eprintln!(
            "{:>9} n_p={:<4} rmse {:?} over {}/{} seeds",
            row.method.as_str(),
            row.n_p,
            row.summary.rmse_mean,
            row.summary.n_seeds_ok,
            row.summary.n_seeds
        );
    }
    emit(
        out,
        json!({
            "report": paths[0],
            "outputs": paths,
            "seeds": report.seeds,
            "failed_cells": failed,
        }),
    )?;
    Ok(if failed > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

/// Runs one parsed command, writing results to `out`.
pub fn execute(cli: &Cli, out: &mut dyn std::io::Write) -> CliResult {
    match &cli.command {
        Command::Simulate(a) => simulate(a, out),
        Command::TrainGpr(a) => train_gpr(a, out),
        Command::CalibrateFourPoint(a) => calibrate_4point(a, out),
        Command::CalibrateFit(a) => calibrate_fit(a, out),
        Command::Estimate(a) => estimate(a, out),
        Command::Benchmark(a) => benchmark(a, out),
        Command::Patterns => {
            emit(out, patterns_json())?;
            Ok(EXIT_OK)
        }
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(&cli, &mut lock) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}: {}", f.error.name(), f.error);
            f.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_subcommands() {
        let c = Cli::try_parse_from(["ndthermo", "estimate", "--method", "fit", "--model", "m.json", "s.csv"]).unwrap();
        assert!(matches!(c.command, Command::Estimate(EstimateArgs { method: MethodArg::Fit, .. })));
        let c = Cli::try_parse_from(["ndthermo", "calibrate-4point", "--out", "c.json", "a.csv"]).unwrap();
        let Command::CalibrateFourPoint(a) = c.command else { panic!() };
        assert_eq!(a.pattern, 10);
        assert!(Cli::try_parse_from(["ndthermo", "estimate", "--method", "magic"]).is_err());
        assert!(Cli::try_parse_from(["ndthermo", "train-gpr", "--out", "m", "--n-p", "4", "--pattern", "3", "x.csv"]).is_err());
    }

    #[test]
    fn config_accepts_partial_documents() {
        let cfg: RunConfig = serde_json::from_str(r#"{"scenario": {"noise": {"seed": 9}}}"#).unwrap();
        assert_eq!(cfg.scenario.noise.seed, 9);
        assert_eq!(cfg.scenario.temperatures_k.len(), 11);
        assert!(serde_json::from_str::<RunConfig>(r#"{"scenaro": {}}"#).is_err());
    }

    #[test]
    fn patterns_listing() {
        let v = patterns_json();
        assert_eq!(v.as_array().unwrap().len(), 15);
        assert_eq!(v[9]["offsets_mhz"], json!([-16, -14, 14, 16]));
        assert_eq!(v[9]["index"], json!(10));
    }
}
