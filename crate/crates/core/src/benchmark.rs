//! Evaluation protocol: calibrate or train on one replicate, estimate the
//! other, and score with the RMSE over the temperature grid. Includes the
//! N_p sweep, the 15-pattern study, and a seed-replicated wrapper.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classical::{
    calibrate_zfs, default_pattern, enumerate_four_point_patterns, estimate_fit,
    estimate_four_point, four_point::EXPERIMENTAL_PATTERN_RMSE_K, four_point_from_zfs,
    FourPointPattern, ZfsCalibration, DEFAULT_PATTERN_INDEX, PATTERN_CENTER_MHZ,
};
use crate::error::{Error, Result};
use crate::gpr::{train_subsampled, GprHyperparams};
use crate::spectrum::{CalibrationModel, PointSelection, Spectrum};
use crate::synth::{replicate, synth_dataset, ScenarioConfig};

pub const DEFAULT_BIN_WIDTH_K: f64 = 0.25;
pub const DEFAULT_NP_VALUES: [usize; 7] = [4, 11, 21, 41, 81, 161, 321];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodId {
    #[serde(rename = "fourpoint")]
    FourPoint,
    #[serde(rename = "fit")]
    LorentzFit,
    #[serde(rename = "gpr")]
    Gpr,
}

impl MethodId {
    pub const ALL: [MethodId; 3] = [MethodId::FourPoint, MethodId::LorentzFit, MethodId::Gpr];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::FourPoint => "fourpoint",
            MethodId::LorentzFit => "fit",
            MethodId::Gpr => "gpr",
        }
    }
}

impl std::fmt::Display for MethodId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fourpoint" => Ok(MethodId::FourPoint),
            "fit" => Ok(MethodId::LorentzFit),
            "gpr" => Ok(MethodId::Gpr),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected fourpoint, fit or gpr)"
            ))),
        }
    }
}

/// Which points of each spectrum an analysis uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    /// `n_p` equally spaced points. `n_p = 4` means the default 4-point
    /// pattern instead.
    Points(usize),
    /// A four-frequency pattern; `index` is its 1-based table position.
    Pattern {
        index: Option<usize>,
        pattern: FourPointPattern,
    },
}

impl Analysis {
    pub fn table_pattern(index: usize) -> Result<Analysis> {
        let patterns = enumerate_four_point_patterns();
        if index == 0 || index > patterns.len() {
            return Err(Error::Config(format!("pattern index {index} outside 1..=15")));
        }
        Ok(Analysis::Pattern {
            index: Some(index),
            pattern: patterns[index - 1],
        })
    }

    pub fn n_p(&self) -> usize {
        match self {
            Analysis::Points(n) => *n,
            Analysis::Pattern { .. } => 4,
        }
    }

    /// The pattern this analysis reduces to, if it uses four points.
    pub fn pattern(&self) -> Option<(Option<usize>, FourPointPattern)> {
        match self {
            Analysis::Points(4) => Some((Some(DEFAULT_PATTERN_INDEX), default_pattern())),
            Analysis::Points(_) => None,
            Analysis::Pattern { index, pattern } => Some((*index, *pattern)),
        }
    }

    pub fn selection(&self) -> PointSelection {
        match self.pattern() {
            Some((_, p)) => PointSelection::Frequencies(p.frequencies_mhz().to_vec()),
            None => PointSelection::EquallySpaced(self.n_p()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub t_true_k: f64,
    pub t_est_k: Option<f64>,
    /// Predictive standard deviation (GPR only).
    pub std_k: Option<f64>,
    /// Error name when this temperature failed.
    pub failure: Option<String>,
    pub message: Option<String>,
}

impl Estimate {
    fn failed(t_true_k: f64, e: &Error) -> Self {
        Estimate {
            t_true_k,
            t_est_k: None,
            std_k: None,
            failure: Some(e.name().to_string()),
            message: Some(e.to_string()),
        }
    }
}

/// What produced a report: the seed and whatever the method calibrated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub seed: Option<u64>,
    pub calibration: Option<CalibrationModel>,
    pub gpr_hyperparams: Option<GprHyperparams>,
    pub gpr_kernel: Option<String>,
    /// Table values `(gpr, fourpoint)` in K for a table pattern; context only.
    pub experimental_rmse_k: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub method: MethodId,
    pub analysis: Analysis,
    pub n_p: usize,
    pub estimates: Vec<Estimate>,
    /// RMSE over successful estimates; `None` when none succeeded.
    pub rmse_k: Option<f64>,
    pub n_success: usize,
    pub config: ConfigEcho,
}

impl BenchmarkReport {
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.estimates
            .iter()
            .filter_map(|e| e.t_est_k.map(|t| (e.t_true_k, t)))
            .collect()
    }

    pub fn failures(&self) -> usize {
        self.estimates.len() - self.n_success
    }

    /// Stored RMSE and success count agree with the stored pairs.
    pub fn validate(&self) -> Result<()> {
        let pairs = self.pairs();
        let expected = if pairs.is_empty() { None } else { Some(rmse(&pairs)?) };
        if pairs.len() != self.n_success || expected != self.rmse_k {
            return Err(Error::InternalConsistency(format!(
                "{} report: stored rmse {:?} vs recomputed {:?}",
                self.method, self.rmse_k, expected
            )));
        }
        Ok(())
    }
}

/// `sqrt(mean((T_est - T_true)²))` over `(T_true, T_est)` pairs.
pub fn rmse(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidParams("rmse of an empty list".into()));
    }
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::NonFinite("rmse input"));
    }
    let se: f64 = pairs.iter().map(|(t, e)| (e - t) * (e - t)).sum();
    Ok((se / pairs.len() as f64).sqrt())
}

/// Non-empty bins as `(lower_edge, count)`, edges at multiples of
/// `bin_width`; a value on an edge belongs to the bin above it.
pub fn histogram(values: &[f64], bin_width: f64) -> Result<Vec<(f64, usize)>> {
    if values.is_empty() {
        return Err(Error::InvalidParams("histogram of an empty list".into()));
    }
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(Error::InvalidParams(format!("bin width {bin_width}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("histogram input"));
    }
    let mut bins: Vec<(i64, usize)> = Vec::new();
    for &v in values {
        let mut k = (v / bin_width).floor() as i64;
        // the quotient can round across an edge
        if (k + 1) as f64 * bin_width <= v {
            k += 1;
        } else if k as f64 * bin_width > v {
            k -= 1;
        }
        match bins.binary_search_by_key(&k, |b| b.0) {
            Ok(i) => bins[i].1 += 1,
            Err(i) => bins.insert(i, (k, 1)),
        }
    }
    Ok(bins.into_iter().map(|(k, c)| (k as f64 * bin_width, c)).collect())
}

fn labels(set: &[Spectrum]) -> Result<Vec<f64>> {
    set.iter()
        .map(|s| {
            s.true_temperature_k()
                .ok_or_else(|| Error::InvalidSpectrum("benchmark spectra must be labeled".into()))
        })
        .collect()
}

fn check_sets(train: &[Spectrum], test: &[Spectrum]) -> Result<()> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config("train and test sets must be non-empty".into()));
    }
    let grid = train[0].frequencies_mhz();
    if train.iter().chain(test).any(|s| s.frequencies_mhz() != grid) {
        return Err(Error::GridMismatch);
    }
    labels(train)?;
    labels(test)?;
    Ok(())
}

fn assemble(
    method: MethodId,
    analysis: &Analysis,
    estimates: Vec<Estimate>,
    config: ConfigEcho,
) -> BenchmarkReport {
    let pairs: Vec<(f64, f64)> = estimates
        .iter()
        .filter_map(|e| e.t_est_k.map(|t| (e.t_true_k, t)))
        .collect();
    BenchmarkReport {
        method,
        n_p: analysis.n_p(),
        analysis: analysis.clone(),
        n_success: pairs.len(),
        rmse_k: if pairs.is_empty() { None } else { rmse(&pairs).ok() },
        estimates,
        config,
    }
}

fn estimate_each(
    test: &[Spectrum],
    mut f: impl FnMut(&Spectrum) -> Result<(f64, Option<f64>)>,
) -> Vec<Estimate> {
    test.iter()
        .map(|s| {
            let t_true_k = s.true_temperature_k().unwrap_or(f64::NAN);
            match f(s).and_then(|(t, sd)| {
                if t.is_finite() {
                    Ok((t, sd))
                } else {
                    Err(Error::NonFinite("temperature estimate"))
                }
            }) {
                Ok((t, std_k)) => Estimate {
                    t_true_k,
                    t_est_k: Some(t),
                    std_k,
                    failure: None,
                    message: None,
                },
                Err(e) => Estimate::failed(t_true_k, &e),
            }
        })
        .collect()
}

fn all_failed(test: &[Spectrum], e: &Error) -> Vec<Estimate> {
    test.iter()
        .map(|s| Estimate::failed(s.true_temperature_k().unwrap_or(f64::NAN), e))
        .collect()
}

fn experimental(analysis: &Analysis) -> Option<(f64, f64)> {
    match analysis.pattern() {
        Some((Some(i), _)) if (1..=15).contains(&i) => Some(EXPERIMENTAL_PATTERN_RMSE_K[i - 1]),
        _ => None,
    }
}

fn evaluate_four_point(
    zfs: std::result::Result<&ZfsCalibration, &Error>,
    train: &[Spectrum],
    test: &[Spectrum],
    analysis: &Analysis,
    seed: Option<u64>,
) -> BenchmarkReport {
    let mut config = ConfigEcho {
        seed,
        experimental_rmse_k: experimental(analysis),
        ..ConfigEcho::default()
    };
    let estimates = match (analysis.pattern(), zfs) {
        (None, _) => {
            let e = Error::Config(format!(
                "the 4-point method needs a pattern, not n_p = {}",
                analysis.n_p()
            ));
            all_failed(test, &e)
        }
        (Some(_), Err(e)) => all_failed(test, e),
        (Some((_, pattern)), Ok(zfs)) => match four_point_from_zfs(zfs, train, &pattern, None) {
            Ok(cal) => {
                config.calibration = Some(cal.cal);
                estimate_each(test, |s| Ok((estimate_four_point(&cal, s)?, None)))
            }
            Err(e) => all_failed(test, &e),
        },
    };
    assemble(MethodId::FourPoint, analysis, estimates, config)
}

fn evaluate_fit(
    train: &[Spectrum],
    test: &[Spectrum],
    analysis: &Analysis,
    seed: Option<u64>,
) -> BenchmarkReport {
    let mut config = ConfigEcho {
        seed,
        ..ConfigEcho::default()
    };
    let sel = analysis.selection();
    let reduce = |set: &[Spectrum]| set.iter().map(|s| sel.apply(s)).collect::<Result<Vec<_>>>();
    let estimates = match reduce(train).and_then(|tr| calibrate_zfs(&tr)) {
        Ok(zfs) => {
            config.calibration = Some(zfs.cal);
            estimate_each(test, |s| Ok((estimate_fit(&zfs.cal, &sel.apply(s)?)?, None)))
        }
        Err(e) => all_failed(test, &e),
    };
    assemble(MethodId::LorentzFit, analysis, estimates, config)
}

fn evaluate_gpr(
    train: &[Spectrum],
    test: &[Spectrum],
    analysis: &Analysis,
    seed: Option<u64>,
) -> BenchmarkReport {
    let mut config = ConfigEcho {
        seed,
        experimental_rmse_k: experimental(analysis),
        ..ConfigEcho::default()
    };
    let sel = analysis.selection();
    let estimates = match train_subsampled(train, &sel, None) {
        Ok(model) => {
            config.gpr_hyperparams = Some(model.hyper);
            config.gpr_kernel = Some("squared_exponential".into());
            estimate_each(test, |s| {
                let p = model.predict(&sel.apply(s)?)?;
                Ok((p.mean_k, Some(p.std_k)))
            })
        }
        Err(e) => all_failed(test, &e),
    };
    assemble(MethodId::Gpr, analysis, estimates, config)
}

/// Always returns a report; estimator failures are flagged per temperature.
/// Errors only on malformed input sets.
pub fn evaluate(
    method: MethodId,
    train: &[Spectrum],
    test: &[Spectrum],
    analysis: &Analysis,
    seed: Option<u64>,
) -> Result<BenchmarkReport> {
    check_sets(train, test)?;
    Ok(match method {
        MethodId::FourPoint => {
            let zfs = if analysis.pattern().is_some() {
                calibrate_zfs(train)
            } else {
                Err(Error::Config("unused".into()))
            };
            evaluate_four_point(zfs.as_ref(), train, test, analysis, seed)
        }
        MethodId::LorentzFit => evaluate_fit(train, test, analysis, seed),
        MethodId::Gpr => evaluate_gpr(train, test, analysis, seed),
    })
}

/// Like [`evaluate`], but a report without a single success is an error.
pub fn run_method(
    method: MethodId,
    train: &[Spectrum],
    test: &[Spectrum],
    analysis: &Analysis,
) -> Result<BenchmarkReport> {
    let report = evaluate(method, train, test, analysis, None)?;
    if report.n_success == 0 {
        return Err(Error::AllEstimatesFailed);
    }
    Ok(report)
}

/// One report per (method, n_p), method-major. Failed cells stay in the
/// output with their flags.
pub fn sweep_np(
    methods: &[MethodId],
    train: &[Spectrum],
    test: &[Spectrum],
    np_values: &[usize],
    seed: Option<u64>,
) -> Result<Vec<BenchmarkReport>> {
    if let Some(n) = np_values.iter().find(|&&n| n < 2) {
        return Err(Error::Config(format!("n_p = {n} is below 2")));
    }
    let mut out = Vec::with_capacity(methods.len() * np_values.len());
    for &m in methods {
        for &n in np_values {
            out.push(evaluate(m, train, test, &Analysis::Points(n), seed)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternResult {
    /// 1-based table index.
    pub index: usize,
    pub offsets_mhz: [f64; 4],
    pub gpr: BenchmarkReport,
    pub four_point: BenchmarkReport,
}

impl PatternResult {
    pub fn rmse_gpr(&self) -> Option<f64> {
        self.gpr.rmse_k
    }

    pub fn rmse_fourpoint(&self) -> Option<f64> {
        self.four_point.rmse_k
    }
}

/// The 15-pattern study with the D-vs-T calibration taken from `train`.
pub fn pattern_study(
    train: &[Spectrum],
    test: &[Spectrum],
    seed: Option<u64>,
) -> Result<Vec<PatternResult>> {
    check_sets(train, test)?;
    let zfs = calibrate_zfs(train);
    pattern_study_inner(zfs.as_ref(), train, test, seed)
}

/// The 15-pattern study with every 4-point calibration built on `zfs`.
pub fn pattern_study_with(
    zfs: &ZfsCalibration,
    train: &[Spectrum],
    test: &[Spectrum],
    seed: Option<u64>,
) -> Result<Vec<PatternResult>> {
    check_sets(train, test)?;
    pattern_study_inner(Ok(zfs), train, test, seed)
}

fn pattern_study_inner(
    zfs: std::result::Result<&ZfsCalibration, &Error>,
    train: &[Spectrum],
    test: &[Spectrum],
    seed: Option<u64>,
) -> Result<Vec<PatternResult>> {
    (1..=15)
        .map(|index| {
            let analysis = Analysis::table_pattern(index)?;
            let Analysis::Pattern { pattern, .. } = analysis else {
                unreachable!("table_pattern builds a pattern")
            };
            Ok(PatternResult {
                index,
                offsets_mhz: pattern.offsets_mhz(PATTERN_CENTER_MHZ),
                gpr: evaluate_gpr(train, test, &analysis, seed),
                four_point: evaluate_four_point(zfs, train, test, &analysis, seed),
            })
        })
        .collect()
}

/// Settings of a seed-replicated study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub methods: Vec<MethodId>,
    pub np_values: Vec<usize>,
    pub patterns: bool,
    /// Synthesizer seeds are `scenario.noise.seed + k` for `k < n_seeds`.
    pub n_seeds: usize,
    pub bin_width_k: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            methods: MethodId::ALL.to_vec(),
            np_values: DEFAULT_NP_VALUES.to_vec(),
            patterns: true,
            n_seeds: 20,
            bin_width_k: DEFAULT_BIN_WIDTH_K,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be at least 1".into()));
        }
        if let Some(n) = self.np_values.iter().find(|&&n| n < 2) {
            return Err(Error::Config(format!("n_p = {n} is below 2")));
        }
        if !(self.bin_width_k > 0.0) || !self.bin_width_k.is_finite() {
            return Err(Error::Config(format!("bin width {}", self.bin_width_k)));
        }
        if self.methods.is_empty() && !self.patterns {
            return Err(Error::Config("study requests no methods and no patterns".into()));
        }
        Ok(())
    }
}

/// Mean and sample standard deviation over seeds, successful seeds only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub rmse_mean: Option<f64>,
    pub rmse_std: Option<f64>,
    pub n_seeds_ok: usize,
    pub n_seeds: usize,
}

impl SeedSummary {
    pub fn from_values(values: &[Option<f64>]) -> Self {
        let ok: Vec<f64> = values.iter().flatten().copied().collect();
        let n = ok.len();
        let mean = (n > 0).then(|| ok.iter().sum::<f64>() / n as f64);
        let std = mean.map(|m| {
            if n > 1 {
                (ok.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            }
        });
        SeedSummary {
            rmse_mean: mean,
            rmse_std: std,
            n_seeds_ok: n,
            n_seeds: values.len(),
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> Option<f64> {
        Some(self.rmse_std? / (self.n_seeds_ok as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpSummary {
    pub method: MethodId,
    pub n_p: usize,
    pub summary: SeedSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSummary {
    pub index: usize,
    pub offsets_mhz: [f64; 4],
    pub gpr: SeedSummary,
    pub four_point: SeedSummary,
    pub experimental_rmse_k: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub method: MethodId,
    pub bin_lower: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub np_reports: Vec<BenchmarkReport>,
    pub patterns: Vec<PatternResult>,
}

/// Everything a study produced, serialized as the JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub scenario: ScenarioConfig,
    pub study: StudyConfig,
    pub seeds: Vec<u64>,
    pub runs: Vec<SeedRun>,
    pub np_summary: Vec<NpSummary>,
    pub pattern_summary: Vec<PatternSummary>,
    /// Histogram of the per-pattern mean RMSEs, per method.
    pub histogram: Vec<HistogramBin>,
}

impl StudyReport {
    pub fn reports(&self) -> impl Iterator<Item = &BenchmarkReport> {
        self.runs.iter().flat_map(|r| {
            r.np_reports
                .iter()
                .chain(r.patterns.iter().flat_map(|p| [&p.gpr, &p.four_point]))
        })
    }

    /// Number of reports with at least one failed temperature.
    pub fn failed_cells(&self) -> usize {
        self.reports().filter(|r| r.failures() > 0).count()
    }
}

/// One protocol run on the synthesizer output for `scenario`.
pub fn run_seed(scenario: &ScenarioConfig, study: &StudyConfig) -> Result<SeedRun> {
    let data = synth_dataset(scenario)?;
    let train = replicate(scenario, &data, 0);
    let test = replicate(scenario, &data, 1);
    let seed = Some(scenario.noise.seed);
    let np_reports = sweep_np(&study.methods, &train, &test, &study.np_values, seed)?;
    let patterns = if study.patterns {
        pattern_study(&train, &test, seed)?
    } else {
        vec![]
    };
    Ok(SeedRun {
        seed: scenario.noise.seed,
        np_reports,
        patterns,
    })
}

/// Repeats the protocol over consecutive seeds in parallel and aggregates.
pub fn run_study(scenario: &ScenarioConfig, study: &StudyConfig) -> Result<StudyReport> {
    scenario.validate()?;
    study.validate()?;
    if scenario.replicates < 2 {
        return Err(Error::Config("a study needs 2 replicates (train and test)".into()));
    }
    let seeds: Vec<u64> = (0..study.n_seeds as u64)
        .map(|k| scenario.noise.seed.wrapping_add(k))
        .collect();
    let runs: Vec<SeedRun> = seeds
        .par_iter()
        .map(|&s| run_seed(&scenario.with_seed(s), study))
        .collect::<Result<_>>()?;

    let mut np_summary = Vec::new();
    for &method in &study.methods {
        for &n_p in &study.np_values {
            let values: Vec<Option<f64>> = runs
                .iter()
                .map(|r| {
                    r.np_reports
                        .iter()
                        .find(|b| b.method == method && b.n_p == n_p)
                        .and_then(|b| b.rmse_k)
                })
                .collect();
            np_summary.push(NpSummary {
                method,
                n_p,
                summary: SeedSummary::from_values(&values),
            });
        }
    }

    let mut pattern_summary = Vec::new();
    if study.patterns {
        for i in 0..15 {
            let gpr: Vec<Option<f64>> = runs.iter().map(|r| r.patterns[i].rmse_gpr()).collect();
            let fp: Vec<Option<f64>> = runs.iter().map(|r| r.patterns[i].rmse_fourpoint()).collect();
            pattern_summary.push(PatternSummary {
                index: i + 1,
                offsets_mhz: runs[0].patterns[i].offsets_mhz,
                gpr: SeedSummary::from_values(&gpr),
                four_point: SeedSummary::from_values(&fp),
                experimental_rmse_k: EXPERIMENTAL_PATTERN_RMSE_K[i],
            });
        }
    }

    let mut hist = Vec::new();
    for (method, pick) in [
        (MethodId::Gpr, (|p: &PatternSummary| p.gpr.rmse_mean) as fn(&PatternSummary) -> Option<f64>),
        (MethodId::FourPoint, |p: &PatternSummary| p.four_point.rmse_mean),
    ] {
        let values: Vec<f64> = pattern_summary.iter().filter_map(pick).collect();
        if values.is_empty() {
            continue;
        }
        for (bin_lower, count) in histogram(&values, study.bin_width_k)? {
            hist.push(HistogramBin {
                method,
                bin_lower,
                count,
            });
        }
    }

    Ok(StudyReport {
        scenario: scenario.clone(),
        study: study.clone(),
        seeds,
        runs,
        np_summary,
        pattern_summary,
        histogram: hist,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn rmse_vs_np_csv(report: &StudyReport) -> String {
    let mut out = String::from("method,n_p,rmse_mean,rmse_std\n");
    for row in &report.np_summary {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            row.method,
            row.n_p,
            opt(row.summary.rmse_mean),
            opt(row.summary.rmse_std)
        );
    }
    out
}

/// Offsets are joined with `;` to keep the column count fixed.
pub fn pattern_rmse_csv(report: &StudyReport) -> String {
    let mut out = String::from("index,offsets,rmse_gpr,rmse_fourpoint\n");
    for row in &report.pattern_summary {
        let offsets: Vec<String> = row.offsets_mhz.iter().map(|o| o.to_string()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{}",
            row.index,
            offsets.join(";"),
            opt(row.gpr.rmse_mean),
            opt(row.four_point.rmse_mean)
        );
    }
    out
}

pub fn histogram_csv(report: &StudyReport) -> String {
    let mut out = String::from("method,bin_lower,count\n");
    for b in &report.histogram {
        let _ = writeln!(out, "{},{},{}", b.method, b.bin_lower, b.count);
    }
    out
}

pub const REPORT_FILE: &str = "report.json";
pub const RMSE_VS_NP_FILE: &str = "rmse_vs_np.csv";
pub const PATTERN_RMSE_FILE: &str = "pattern_rmse.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";

/// Writes the JSON report and the three plot-data CSVs into `dir`.
pub fn write_study(report: &StudyReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    let files = [
        (REPORT_FILE, json),
        (RMSE_VS_NP_FILE, rmse_vs_np_csv(report)),
        (PATTERN_RMSE_FILE, pattern_rmse_csv(report)),
        (HISTOGRAM_FILE, histogram_csv(report)),
    ];
    let mut paths = Vec::new();
    for (name, text) in files {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        paths.push(p);
    }
    Ok(paths)
}
