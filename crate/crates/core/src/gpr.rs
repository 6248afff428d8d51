//! Exact Gaussian process regression from intensity vectors to temperature.
//!
//! Inputs are z-scored per frequency, targets are z-scored, and the kernel is
//! an isotropic squared exponential. Hyperparameters live in log space and are
//! set by maximizing the log marginal likelihood from a fixed grid of starts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    cholesky, dot, log_det, maximize, solve_chol, Bounds, CholeskyFactor, Matrix,
    MaximizeSettings, Objective, SymMatrix,
};
use crate::spectrum::{PointSelection, Spectrum};

pub const MODEL_VERSION: u32 = 1;
/// Always added to the noise variance (standardized units).
pub const NOISE_FLOOR: f64 = 1e-10;
/// Box half-width for every log hyperparameter.
pub const LOG_BOUND: f64 = 12.0;
/// Largest diagonal jitter the final factorization may add.
pub const MAX_JITTER: f64 = 1e-6;
/// Pre-clamp predictive variances below this are reported as a bug.
pub const NEGATIVE_VARIANCE_TOL: f64 = -1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GprHyperparams {
    pub log_lengthscale: f64,
    pub log_signal_variance: f64,
    pub log_noise_variance: f64,
}

impl GprHyperparams {
    pub fn new(log_lengthscale: f64, log_signal_variance: f64, log_noise_variance: f64) -> Self {
        GprHyperparams {
            log_lengthscale,
            log_signal_variance,
            log_noise_variance,
        }
    }

    fn from_slice(v: &[f64]) -> Self {
        GprHyperparams::new(v[0], v[1], v[2])
    }

    fn to_vec(self) -> Vec<f64> {
        vec![self.log_lengthscale, self.log_signal_variance, self.log_noise_variance]
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_vec().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("GPR hyperparameters"))
        }
    }

    pub fn lengthscale(&self) -> f64 {
        self.log_lengthscale.exp()
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    /// Noise variance including [`NOISE_FLOOR`].
    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp() + NOISE_FLOOR
    }
}

/// Covariance function family. Only the squared exponential exists today.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    #[default]
    SquaredExponential,
}

impl KernelKind {
    /// Covariance as a function of squared distance.
    fn from_sq_dist(self, d2: f64, h: &GprHyperparams) -> f64 {
        match self {
            KernelKind::SquaredExponential => {
                let l2 = (2.0 * h.log_lengthscale).exp();
                h.signal_variance() * (-d2 / (2.0 * l2)).exp()
            }
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared-exponential covariance `σ_f² exp(-|x1 - x2|² / 2ℓ²)`.
pub fn kernel(x1: &[f64], x2: &[f64], h: &GprHyperparams) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(Error::DimensionMismatch {
            expected: x1.len(),
            got: x2.len(),
        });
    }
    Ok(KernelKind::SquaredExponential.from_sq_dist(sq_dist(x1, x2), h))
}

/// Noise-free kernel matrix over the rows of `x`.
pub fn kernel_matrix(x: &Matrix, h: &GprHyperparams) -> SymMatrix {
    SymMatrix::from_fn(x.rows(), |i, j| {
        KernelKind::SquaredExponential.from_sq_dist(sq_dist(x.row(i), x.row(j)), h)
    })
}

/// Per-dimension affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics over rows. Constant dimensions keep std 1.
    pub fn fit(rows: &[&[f64]]) -> Standardizer {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Log marginal likelihood in standardized units, with its analytic gradient
/// with respect to the three log hyperparameters.
pub struct MarginalLikelihood {
    sq_dists: SymMatrix,
    y: Vec<f64>,
}

impl MarginalLikelihood {
    pub fn new(x: &Matrix, y: &[f64]) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.rows(),
                got: y.len(),
            });
        }
        Ok(MarginalLikelihood {
            sq_dists: SymMatrix::from_fn(x.rows(), |i, j| sq_dist(x.row(i), x.row(j))),
            y: y.to_vec(),
        })
    }

    fn covariance(&self, h: &GprHyperparams) -> (SymMatrix, SymMatrix) {
        let n = self.y.len();
        let kf = SymMatrix::from_fn(n, |i, j| {
            KernelKind::SquaredExponential.from_sq_dist(self.sq_dists.get(i, j), h)
        });
        let k = kf.add_diagonal(h.noise_variance());
        (kf, k)
    }

    /// Value at `h`, or `None` where the covariance does not factor.
    pub fn evaluate(&self, h: &GprHyperparams) -> Option<f64> {
        let (_, k) = self.covariance(h);
        let f = cholesky(&k, 0.0).ok()?;
        let alpha = solve_chol(&f, &self.y).ok()?;
        let n = self.y.len() as f64;
        let v = -0.5 * dot(&self.y, &alpha)
            - 0.5 * log_det(&f)
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
        v.is_finite().then_some(v)
    }

    /// `½ tr((ααᵀ - K⁻¹) ∂K/∂θ)` for each log hyperparameter.
    pub fn gradient_at(&self, h: &GprHyperparams) -> Option<Vec<f64>> {
        let n = self.y.len();
        let (kf, k) = self.covariance(h);
        let f = cholesky(&k, 0.0).ok()?;
        let alpha = solve_chol(&f, &self.y).ok()?;
        let kinv = f.inverse();
        let inv_l2 = (-2.0 * h.log_lengthscale).exp();
        let noise = h.log_noise_variance.exp();
        let mut g = [0.0; 3];
        for i in 0..n {
            for j in 0..n {
                let w = alpha[i] * alpha[j] - kinv.get(i, j);
                let kij = kf.get(i, j);
                g[0] += w * kij * self.sq_dists.get(i, j) * inv_l2;
                g[1] += w * kij;
            }
            g[2] += (alpha[i] * alpha[i] - kinv.get(i, i)) * noise;
        }
        let g: Vec<f64> = g.iter().map(|v| 0.5 * v).collect();
        g.iter().all(|v| v.is_finite()).then_some(g)
    }
}

impl Objective for MarginalLikelihood {
    fn value(&self, x: &[f64]) -> f64 {
        self.evaluate(&GprHyperparams::from_slice(x))
            .unwrap_or(f64::NEG_INFINITY)
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.gradient_at(&GprHyperparams::from_slice(x))
    }
}

/// The 27 deterministic starting points for `d` input dimensions.
pub fn default_starts(d: usize) -> Vec<GprHyperparams> {
    let root = (d as f64).sqrt();
    let mut out = Vec::with_capacity(27);
    for l in [0.5 * root, root, 2.0 * root] {
        for sf in [-2.0, 0.0, 2.0] {
            for sn in [-6.0, -3.0, -1.0] {
                out.push(GprHyperparams::new(l.ln(), sf, sn));
            }
        }
    }
    out
}

pub fn hyperparameter_bounds() -> Bounds {
    Bounds::uniform(3, -LOG_BOUND, LOG_BOUND)
}

/// Summary of the hyperparameter search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub optimized: bool,
    pub log_marginal_likelihood: f64,
    /// LML at each start point, in start order.
    pub start_values: Vec<f64>,
    /// Analytic LML gradient at the returned hyperparameters.
    pub final_gradient: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GprModel {
    pub version: u32,
    pub kernel: KernelKind,
    pub frequencies_mhz: Vec<f64>,
    /// Standardized training inputs, one row per spectrum.
    pub x: Matrix,
    /// Standardized training targets.
    pub y: Vec<f64>,
    pub input_scaling: Standardizer,
    pub target_mean_k: f64,
    pub target_std_k: f64,
    pub hyper: GprHyperparams,
    pub chol: CholeskyFactor,
    pub weights: Vec<f64>,
    pub report: TrainingReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean_k: f64,
    pub std_k: f64,
}

struct Design {
    frequencies_mhz: Vec<f64>,
    x: Matrix,
    y: Vec<f64>,
    input_scaling: Standardizer,
    target_mean_k: f64,
    target_std_k: f64,
}

fn design(spectra: &[Spectrum]) -> Result<Design> {
    if spectra.len() < 2 {
        return Err(Error::InvalidParams(format!(
            "GPR needs at least 2 training spectra, got {}",
            spectra.len()
        )));
    }
    let grid = spectra[0].frequencies_mhz();
    if spectra.iter().any(|s| s.frequencies_mhz() != grid) {
        return Err(Error::GridMismatch);
    }
    let mut rows: Vec<(f64, &[f64])> = spectra
        .iter()
        .map(|s| {
            s.true_temperature_k()
                .map(|t| (t, s.intensities()))
                .ok_or_else(|| Error::InvalidParams("training spectrum has no temperature label".into()))
        })
        .collect::<Result<_>>()?;
    // canonical order, so the model does not depend on how the set was listed
    rows.sort_by(|a, b| {
        a.0.total_cmp(&b.0).then_with(|| {
            a.1.iter()
                .zip(b.1)
                .map(|(u, v)| u.total_cmp(v))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let n = rows.len() as f64;
    let t_mean = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let t_std = (rows.iter().map(|r| (r.0 - t_mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(t_std > 0.0) {
        return Err(Error::DegenerateTargets);
    }
    let inputs: Vec<&[f64]> = rows.iter().map(|r| r.1).collect();
    let input_scaling = Standardizer::fit(&inputs);
    let d = grid.len();
    let mut data = Vec::with_capacity(rows.len() * d);
    for r in &inputs {
        data.extend(input_scaling.apply(r));
    }
    Ok(Design {
        frequencies_mhz: grid.to_vec(),
        x: Matrix::from_row_major(rows.len(), d, data)?,
        y: rows.iter().map(|r| (r.0 - t_mean) / t_std).collect(),
        input_scaling,
        target_mean_k: t_mean,
        target_std_k: t_std,
    })
}

fn assemble(design: Design, hyper: GprHyperparams, report: TrainingReport) -> Result<GprModel> {
    hyper.validate()?;
    let k = kernel_matrix(&design.x, &hyper).add_diagonal(hyper.noise_variance());
    let chol = cholesky(&k, MAX_JITTER)?;
    let weights = solve_chol(&chol, &design.y)?;
    Ok(GprModel {
        version: MODEL_VERSION,
        kernel: KernelKind::SquaredExponential,
        frequencies_mhz: design.frequencies_mhz,
        x: design.x,
        y: design.y,
        input_scaling: design.input_scaling,
        target_mean_k: design.target_mean_k,
        target_std_k: design.target_std_k,
        hyper,
        chol,
        weights,
        report,
    })
}

/// Trains with hyperparameters chosen by multi-start LML maximization.
/// `h0`, when given, is tried before the default start grid (it is clamped
/// into the search box).
pub fn train(spectra: &[Spectrum], h0: Option<&GprHyperparams>) -> Result<GprModel> {
    let design = design(spectra)?;
    let lml = MarginalLikelihood::new(&design.x, &design.y)?;
    let bounds = hyperparameter_bounds();
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(28);
    if let Some(h) = h0 {
        h.validate()?;
        starts.push(h.to_vec().iter().map(|v| v.clamp(-LOG_BOUND, LOG_BOUND)).collect());
    }
    starts.extend(default_starts(design.x.cols()).into_iter().map(|h| h.to_vec()));
    let best = maximize(&lml, &bounds, &starts, &MaximizeSettings::default())?;
    let hyper = GprHyperparams::from_slice(&best.argmax);
    let report = TrainingReport {
        optimized: true,
        log_marginal_likelihood: best.value,
        start_values: best.runs.iter().map(|r| r.start_value).collect(),
        final_gradient: lml.gradient_at(&hyper).unwrap_or_default(),
    };
    assemble(design, hyper, report)
}

/// Trains with the given hyperparameters and no search.
pub fn train_with_hyperparams(spectra: &[Spectrum], h: &GprHyperparams) -> Result<GprModel> {
    h.validate()?;
    let design = design(spectra)?;
    let lml = MarginalLikelihood::new(&design.x, &design.y)?;
    let report = TrainingReport {
        optimized: false,
        log_marginal_likelihood: lml.evaluate(h).unwrap_or(f64::NEG_INFINITY),
        start_values: vec![],
        final_gradient: lml.gradient_at(h).unwrap_or_default(),
    };
    assemble(design, *h, report)
}

/// Applies `selection` to every spectrum, then trains.
pub fn train_subsampled(
    spectra: &[Spectrum],
    selection: &PointSelection,
    h0: Option<&GprHyperparams>,
) -> Result<GprModel> {
    let reduced: Vec<Spectrum> = spectra
        .iter()
        .map(|s| selection.apply(s))
        .collect::<Result<_>>()?;
    train(&reduced, h0)
}

impl GprModel {
    pub fn n_train(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Predictive mean and standard deviation of the temperature.
    pub fn predict(&self, s: &Spectrum) -> Result<Prediction> {
        if s.frequencies_mhz() != self.frequencies_mhz.as_slice() {
            return Err(Error::GridMismatch);
        }
        self.predict_standardized(&self.input_scaling.apply(s.intensities()))
    }

    fn predict_standardized(&self, z: &[f64]) -> Result<Prediction> {
        let kstar: Vec<f64> = (0..self.n_train())
            .map(|i| self.kernel.from_sq_dist(sq_dist(self.x.row(i), z), &self.hyper))
            .collect();
        let mean = dot(&kstar, &self.weights);
        let mut v = kstar;
        self.chol.forward_substitute(&mut v);
        // observation variance: prior signal plus noise, minus what the data explain
        let prior = self.hyper.signal_variance() + self.hyper.noise_variance();
        let var = prior - dot(&v, &v);
        if var < NEGATIVE_VARIANCE_TOL || !var.is_finite() || !mean.is_finite() {
            return Err(Error::InternalConsistency(format!(
                "predictive variance {var:e} in standardized units"
            )));
        }
        Ok(Prediction {
            mean_k: self.target_mean_k + self.target_std_k * mean,
            std_k: self.target_std_k * var.max(0.0).sqrt(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<GprModel> {
        let m: GprModel = serde_json::from_str(text)?;
        m.check()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<GprModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GprModel::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Parse {
                path: path.to_path_buf(),
                message: j.to_string(),
            },
            other => other,
        })
    }

    fn check(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(Error::Config(format!(
                "unsupported GPR model version {}",
                self.version
            )));
        }
        let (n, d) = (self.x.rows(), self.x.cols());
        let consistent = n >= 2
            && d >= 1
            && self.y.len() == n
            && self.weights.len() == n
            && self.chol.dim() == n
            && self.frequencies_mhz.len() == d
            && self.input_scaling.mean.len() == d
            && self.input_scaling.std.len() == d;
        if !consistent {
            return Err(Error::InternalConsistency("GPR model arrays disagree in size".into()));
        }
        self.hyper.validate()
    }
}
