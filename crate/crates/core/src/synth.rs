//! Synthetic ODMR datasets with known temperatures.
//!
//! A spectrum at temperature `T` is the reference line shape translated
//! rigidly by `D(T) - D(T0)`, plus i.i.d. Gaussian intensity noise whose
//! standard deviation is `sigma_per_sweep / sqrt(n_sweeps)`.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::{
    temperature_to_zfs, CalibrationModel, DoubleLorentzianParams, Spectrum, SweepGrid,
};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Standard deviation of one sweep, in units of the baseline.
    pub sigma_per_sweep: f64,
    pub n_sweeps: u32,
    pub seed: u64,
}

impl NoiseModel {
    pub fn effective_std(&self) -> f64 {
        self.sigma_per_sweep / f64::from(self.n_sweeps).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_per_sweep.is_finite() && self.sigma_per_sweep >= 0.0) {
            return Err(Error::Config("noise.sigma_per_sweep must be >= 0".into()));
        }
        if self.n_sweeps == 0 {
            return Err(Error::Config("noise.n_sweeps must be positive".into()));
        }
        Ok(())
    }
}

impl Default for NoiseModel {
    /// 1.5e-3 per sweep over 100 sweeps: fitted D scatters by about 10 kHz
    /// per spectrum, which puts the alpha regression error near 2 kHz/K
    /// over the 11-temperature grid.
    fn default() -> Self {
        NoiseModel {
            sigma_per_sweep: 1.5e-3,
            n_sweeps: 100,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub grid: SweepGrid,
    /// Line shape at the calibration reference temperature `cal.t0_k`.
    pub line_shape: DoubleLorentzianParams,
    pub cal: CalibrationModel,
    pub temperatures_k: Vec<f64>,
    pub noise: NoiseModel,
    pub replicates: usize,
}

/// 280.0, 280.5, ..., 285.0 K.
pub fn default_temperatures() -> Vec<f64> {
    (0..11).map(|i| 280.0 + 0.5 * i as f64).collect()
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            grid: SweepGrid::default(),
            line_shape: DoubleLorentzianParams {
                baseline: 1.0,
                contrast_minus: 0.03,
                contrast_plus: 0.03,
                f_minus_mhz: 2864.0,
                f_plus_mhz: 2876.0,
                fwhm_minus_mhz: 12.0,
                fwhm_plus_mhz: 12.0,
            },
            cal: CalibrationModel {
                alpha_khz_per_k: -74.0,
                t0_k: 280.0,
                d_t0_mhz: 2870.0,
            },
            temperatures_k: default_temperatures(),
            noise: NoiseModel::default(),
            replicates: 2,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid
            .validate()
            .map_err(|e| Error::Config(format!("grid: {e}")))?;
        self.line_shape
            .validate()
            .map_err(|e| Error::Config(format!("line_shape: {e}")))?;
        self.cal
            .validate()
            .map_err(|e| Error::Config(format!("cal: {e}")))?;
        self.noise.validate()?;
        if self.temperatures_k.is_empty() {
            return Err(Error::Config("temperatures_k must not be empty".into()));
        }
        if self.temperatures_k.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("temperatures_k must be finite".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.noise.seed = seed;
        c
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-spectrum stream seed derived from `(seed, t_k, replicate)`.
fn stream_seed(seed: u64, t_k: f64, replicate: usize) -> u64 {
    let a = splitmix64(seed);
    let b = splitmix64(a ^ t_k.to_bits());
    splitmix64(b ^ replicate as u64)
}

/// Noiseless line shape at `t_k`.
pub fn line_shape_at(cfg: &ScenarioConfig, t_k: f64) -> Result<DoubleLorentzianParams> {
    let shift = temperature_to_zfs(&cfg.cal, t_k)? - temperature_to_zfs(&cfg.cal, cfg.cal.t0_k)?;
    Ok(cfg.line_shape.shifted(shift))
}

pub fn synth_spectrum(cfg: &ScenarioConfig, t_k: f64, replicate_index: usize) -> Result<Spectrum> {
    let params = line_shape_at(cfg, t_k)?;
    let freqs = cfg.grid.frequencies();
    let mut values: Vec<f64> = freqs.iter().map(|&f| params.eval(f)).collect();
    let std = cfg.noise.effective_std();
    if std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.noise.seed, t_k, replicate_index));
        for v in values.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += std * z;
        }
    }
    Spectrum::new(freqs, values, Some(t_k))
}

/// Temperature-major, replicate-minor.
pub fn synth_dataset(cfg: &ScenarioConfig) -> Result<Vec<Spectrum>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.temperatures_k.len() * cfg.replicates);
    for &t in &cfg.temperatures_k {
        for r in 0..cfg.replicates {
            out.push(synth_spectrum(cfg, t, r)?);
        }
    }
    Ok(out)
}

/// The spectra of one replicate, in temperature order.
pub fn replicate(cfg: &ScenarioConfig, dataset: &[Spectrum], index: usize) -> Vec<Spectrum> {
    dataset
        .iter()
        .skip(index)
        .step_by(cfg.replicates)
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub temperature_k: f64,
    pub replicate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub scenario: ScenarioConfig,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Loads the spectra listed for `replicate`, in manifest order.
    pub fn load_replicate(&self, dir: &Path, replicate: usize) -> Result<Vec<Spectrum>> {
        self.files
            .iter()
            .filter(|e| e.replicate == replicate)
            .map(|e| Spectrum::read_csv(&dir.join(&e.file)))
            .collect()
    }
}

pub fn spectrum_file_name(t_index: usize, replicate: usize) -> String {
    format!("spectrum_t{t_index:02}_r{replicate}.csv")
}

/// Writes one CSV per (temperature, replicate) and `manifest.json` into
/// `dir`, returning the manifest path.
pub fn write_dataset(cfg: &ScenarioConfig, dir: &Path) -> Result<PathBuf> {
    let spectra = synth_dataset(cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::with_capacity(spectra.len());
    for (k, s) in spectra.iter().enumerate() {
        let (ti, r) = (k / cfg.replicates, k % cfg.replicates);
        let name = spectrum_file_name(ti, r);
        s.write_csv(&dir.join(&name))?;
        files.push(ManifestEntry {
            file: name,
            temperature_k: cfg.temperatures_k[ti],
            replicate: r,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        scenario: cfg.clone(),
        files,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
