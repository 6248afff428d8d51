//! Double-Lorentzian least-squares fitting and the D-vs-T calibration built
//! on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    covariance, least_squares, ConvergenceReport, LeastSquaresProblem, LsqSettings, Matrix,
    Residuals,
};
use crate::spectrum::{zfs_from_params, CalibrationModel, DoubleLorentzianParams, Spectrum, N_LINE_PARAMS};

/// Fewest points a fit accepts: one more than the parameter count.
pub const MIN_FIT_POINTS: usize = N_LINE_PARAMS + 1;

/// Minimum separation between the two detected dips.
pub const MIN_DIP_SEPARATION_MHZ: f64 = 5.0;
const SMOOTHING_SPAN_MHZ: f64 = 2.0;

const FALLBACK_FWHM_MHZ: f64 = 8.0;
const FWHM_BOUNDS_MHZ: (f64, f64) = (0.5, 40.0);
const MAX_CONTRAST: f64 = 0.5;
const MIN_CONTRAST: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: DoubleLorentzianParams,
    pub d_mhz: f64,
    /// One standard error per parameter, in [`DoubleLorentzianParams::to_vec`]
    /// order. `None` when the normal matrix could not be inverted.
    pub std_errors: Option<Vec<f64>>,
    pub sse: f64,
    pub report: ConvergenceReport,
}

struct LineResiduals<'a> {
    freqs: &'a [f64],
    values: &'a [f64],
}

impl Residuals for LineResiduals<'_> {
    fn residuals(&self, theta: &[f64]) -> Vec<f64> {
        let p = DoubleLorentzianParams::from_slice(theta);
        self.freqs
            .iter()
            .zip(self.values)
            .map(|(&f, &y)| p.eval(f) - y)
            .collect()
    }

    fn jacobian(&self, theta: &[f64]) -> Option<Matrix> {
        let p = DoubleLorentzianParams::from_slice(theta);
        let mut jac = Matrix::zeros(self.freqs.len(), N_LINE_PARAMS);
        for (i, &f) in self.freqs.iter().enumerate() {
            for (k, g) in p.gradient(f).into_iter().enumerate() {
                jac.set(i, k, g);
            }
        }
        Some(jac)
    }
}

fn fit_bounds(s: &Spectrum) -> ([f64; N_LINE_PARAMS], [f64; N_LINE_PARAMS]) {
    let f = s.frequencies_mhz();
    let (f_lo, f_hi) = (f[0], f[f.len() - 1]);
    let max_i = s.intensities().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let lower = [
        1e-12,
        MIN_CONTRAST,
        MIN_CONTRAST,
        f_lo,
        f_lo,
        FWHM_BOUNDS_MHZ.0,
        FWHM_BOUNDS_MHZ.0,
    ];
    let upper = [
        10.0 * max_i.max(1e-12),
        MAX_CONTRAST,
        MAX_CONTRAST,
        f_hi,
        f_hi,
        FWHM_BOUNDS_MHZ.1,
        FWHM_BOUNDS_MHZ.1,
    ];
    (lower, upper)
}

/// Fits the seven-parameter double-Lorentzian model. Without `init`, the
/// start point comes from [`auto_initialize`].
pub fn fit_double_lorentzian(
    s: &Spectrum,
    init: Option<&DoubleLorentzianParams>,
) -> Result<FitResult> {
    if s.len() < MIN_FIT_POINTS {
        return Err(Error::UnderDetermined {
            points: s.len(),
            params: N_LINE_PARAMS,
        });
    }
    let start = match init {
        Some(p) => *p,
        None => auto_initialize(s)?,
    };
    let (lower, upper) = fit_bounds(s);
    let mut initial = start.to_vec();
    for k in 0..N_LINE_PARAMS {
        initial[k] = initial[k].clamp(lower[k], upper[k]);
    }
    let res = LineResiduals {
        freqs: s.frequencies_mhz(),
        values: s.intensities(),
    };
    let sol = least_squares(&LeastSquaresProblem {
        residual: &res,
        initial: initial.to_vec(),
        lower: lower.to_vec(),
        upper: upper.to_vec(),
        settings: LsqSettings::default(),
    })?;
    if !sol.report.converged {
        return Err(Error::FitDiverged {
            iterations: sol.report.iterations,
        });
    }
    let raw = DoubleLorentzianParams::from_slice(&sol.theta);
    let params = raw.normalized_order();
    let std_errors = covariance(&sol.jacobian, sol.sse).map(|cov| {
        let mut e: Vec<f64> = (0..N_LINE_PARAMS).map(|k| cov.get(k, k).max(0.0).sqrt()).collect();
        if params != raw {
            e.swap(1, 2);
            e.swap(3, 4);
            e.swap(5, 6);
        }
        e
    });
    Ok(FitResult {
        params,
        d_mhz: zfs_from_params(&params),
        std_errors,
        sse: sol.sse,
        report: sol.report,
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    let back = (window - 1) / 2;
    let fwd = window / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(back);
            let hi = (i + fwd).min(n - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Walks from `from` in direction `step` until the smoothed curve rises
/// back to `level`; returns the linearly interpolated crossing frequency.
fn half_depth_crossing(freqs: &[f64], sm: &[f64], from: usize, level: f64, step: isize) -> Option<f64> {
    let mut i = from as isize;
    loop {
        let j = i + step;
        if j < 0 || j as usize >= sm.len() {
            return None;
        }
        let (a, b) = (i as usize, j as usize);
        if sm[b] >= level {
            let t = (level - sm[a]) / (sm[b] - sm[a]);
            return Some(freqs[a] + t * (freqs[b] - freqs[a]));
        }
        i = j;
    }
}

/// Heuristic start point for the fit: baseline from the upper quartile,
/// dip centers from the two deepest separated minima of a smoothed copy,
/// widths from the outer half-depth crossings.
pub fn auto_initialize(s: &Spectrum) -> Result<DoubleLorentzianParams> {
    let n = s.len();
    if n < MIN_FIT_POINTS {
        return Err(Error::UnderDetermined {
            points: n,
            params: N_LINE_PARAMS,
        });
    }
    let freqs = s.frequencies_mhz();
    let values = s.intensities();

    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let top = n.div_ceil(4);
    let baseline = median(&mut sorted[..top]);

    // about 2 MHz of smoothing, none at all on coarse grids where it
    // would merge the two dips
    let pitch = (freqs[n - 1] - freqs[0]) / (n - 1) as f64;
    let window = ((SMOOTHING_SPAN_MHZ / pitch).round() as usize).max(1);
    let sm = moving_average(values, window);

    // robust point-to-point noise scale
    let mut diffs: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let noise = 1.4826 * median(&mut diffs) / std::f64::consts::SQRT_2;
    let min_depth = 4.0 * noise / (window as f64).sqrt();

    let mut minima: Vec<usize> = (1..n - 1)
        .filter(|&i| sm[i] <= sm[i - 1] && sm[i] < sm[i + 1])
        .filter(|&i| baseline - sm[i] > min_depth.max(0.0) && baseline - sm[i] > 0.0)
        .collect();
    minima.sort_by(|&a, &b| sm[a].total_cmp(&sm[b]).then(a.cmp(&b)));
    let first = *minima.first().ok_or(Error::DipDetectionFailed)?;
    let second = *minima
        .iter()
        .find(|&&i| (freqs[i] - freqs[first]).abs() >= MIN_DIP_SEPARATION_MHZ)
        .ok_or(Error::DipDetectionFailed)?;
    let (lo, hi) = if first < second { (first, second) } else { (second, first) };

    let width = |idx: usize, step: isize| {
        let depth = baseline - sm[idx];
        half_depth_crossing(freqs, &sm, idx, baseline - 0.5 * depth, step)
            .map(|fc| 2.0 * (fc - freqs[idx]).abs())
            .filter(|w| *w > 0.0)
            .unwrap_or(FALLBACK_FWHM_MHZ)
            .clamp(FWHM_BOUNDS_MHZ.0, FWHM_BOUNDS_MHZ.1)
    };
    let contrast = |idx: usize| ((baseline - sm[idx]) / baseline).clamp(1e-6, MAX_CONTRAST);

    Ok(DoubleLorentzianParams {
        baseline,
        contrast_minus: contrast(lo),
        contrast_plus: contrast(hi),
        f_minus_mhz: freqs[lo],
        f_plus_mhz: freqs[hi],
        fwhm_minus_mhz: width(lo, -1),
        fwhm_plus_mhz: width(hi, 1),
    })
}

/// Linear D-vs-T calibration from fitted spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZfsCalibration {
    /// Reference temperature is the lowest calibration temperature.
    pub cal: CalibrationModel,
    pub alpha_std_error_khz_per_k: f64,
    pub temperatures_k: Vec<f64>,
    pub fits: Vec<FitResult>,
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, se_b)`.
pub fn linear_regression(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::DegenerateRegression("needs at least 2 points"));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateRegression("all temperatures are equal"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let se_b = if n > 2 {
        let rss: f64 = x.iter().zip(y).map(|(u, v)| (v - a - b * u).powi(2)).sum();
        (rss / (n - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Ok((a, b, se_b))
}

/// Fits every labeled spectrum and regresses D on T.
pub fn calibrate_zfs(spectra: &[Spectrum]) -> Result<ZfsCalibration> {
    let temperatures: Vec<f64> = spectra
        .iter()
        .map(|s| {
            s.true_temperature_k()
                .ok_or_else(|| Error::InvalidSpectrum("calibration spectrum is unlabeled".into()))
        })
        .collect::<Result<_>>()?;
    if spectra.len() < 2 {
        return Err(Error::DegenerateRegression("needs at least 2 spectra"));
    }
    let t_min = temperatures.iter().cloned().fold(f64::INFINITY, f64::min);
    if temperatures.iter().all(|&t| t == t_min) {
        return Err(Error::DegenerateRegression("all temperatures are equal"));
    }
    let fits: Vec<FitResult> = spectra
        .iter()
        .map(|s| fit_double_lorentzian(s, None))
        .collect::<Result<_>>()?;
    let d: Vec<f64> = fits.iter().map(|f| f.d_mhz).collect();
    let (a, b, se_b) = linear_regression(&temperatures, &d)?;
    let cal = CalibrationModel::new(b * 1000.0, t_min, a + b * t_min)?;
    Ok(ZfsCalibration {
        cal,
        alpha_std_error_khz_per_k: se_b * 1000.0,
        temperatures_k: temperatures,
        fits,
    })
}

/// Temperature of one spectrum through its fitted D.
pub fn estimate_fit(cal: &CalibrationModel, s: &Spectrum) -> Result<f64> {
    let fit = fit_double_lorentzian(s, None)?;
    cal.zfs_to_temperature(fit.d_mhz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::{subsample_equally_spaced, SweepGrid};
    use crate::synth::{line_shape_at, synth_spectrum, ScenarioConfig};

    fn clean_cfg() -> ScenarioConfig {
        let mut c = ScenarioConfig::default();
        c.noise.sigma_per_sweep = 0.0;
        c
    }

    fn assert_params_close(a: &DoubleLorentzianParams, b: &DoubleLorentzianParams, rel: f64) {
        for (x, y) in a.to_vec().iter().zip(b.to_vec()) {
            assert!((x - y).abs() <= rel * y.abs(), "{x} vs {y}");
        }
    }

    #[test]
    fn noiseless_recovery_from_auto_init() {
        let cfg = clean_cfg();
        let s = synth_spectrum(&cfg, 282.5, 0).unwrap();
        let truth = line_shape_at(&cfg, 282.5).unwrap();
        let fit = fit_double_lorentzian(&s, None).unwrap();
        assert_params_close(&fit.params, &truth, 1e-6);
        assert!((fit.d_mhz - zfs_from_params(&truth)).abs() < 1e-6);
        assert!(fit.report.sse_history.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn noiseless_recovery_from_perturbed_start() {
        let cfg = clean_cfg();
        let s = synth_spectrum(&cfg, 281.0, 0).unwrap();
        let truth = line_shape_at(&cfg, 281.0).unwrap();
        let v = truth.to_vec();
        let signs = [1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0];
        let start: Vec<f64> = v.iter().zip(signs).map(|(x, s)| x * (1.0 + 0.05 * s)).collect();
        // 5% of 2870 MHz would move a center by 140 MHz; perturb centers by 5% of the width
        let mut start = DoubleLorentzianParams::from_slice(&start);
        start.f_minus_mhz = truth.f_minus_mhz - 0.05 * truth.fwhm_minus_mhz;
        start.f_plus_mhz = truth.f_plus_mhz + 0.05 * truth.fwhm_plus_mhz;
        let fit = fit_double_lorentzian(&s, Some(&start)).unwrap();
        assert_params_close(&fit.params, &truth, 1e-6);
    }

    #[test]
    fn refit_is_fixed_point() {
        let mut cfg = ScenarioConfig::default();
        cfg.noise.seed = 5;
        let noisy = synth_spectrum(&cfg, 283.0, 1).unwrap();
        let first = fit_double_lorentzian(&noisy, None).unwrap();
        let f = noisy.frequencies_mhz().to_vec();
        let v = f.iter().map(|&x| first.params.eval(x)).collect();
        let model = Spectrum::new(f, v, None).unwrap();
        let again = fit_double_lorentzian(&model, None).unwrap();
        assert_params_close(&again.params, &first.params, 1e-9);
    }

    #[test]
    fn scale_invariance_of_d() {
        let s = synth_spectrum(&ScenarioConfig::default(), 284.0, 0).unwrap();
        let a = fit_double_lorentzian(&s, None).unwrap();
        let b = fit_double_lorentzian(&s.scaled(2.0).unwrap(), None).unwrap();
        assert!((a.d_mhz - b.d_mhz).abs() < 1e-8, "{} vs {}", a.d_mhz, b.d_mhz);
    }

    #[test]
    fn under_determined() {
        let s = synth_spectrum(&clean_cfg(), 281.0, 0).unwrap();
        let four = subsample_equally_spaced(&s, 4).unwrap();
        assert!(matches!(
            fit_double_lorentzian(&four, None),
            Err(Error::UnderDetermined { points: 4, params: 7 })
        ));
        let seven = subsample_equally_spaced(&s, 7).unwrap();
        assert!(matches!(
            auto_initialize(&seven),
            Err(Error::UnderDetermined { .. })
        ));
    }

    #[test]
    fn auto_init_centers_within_1mhz() {
        let cfg = clean_cfg();
        for t in [280.0, 282.5, 285.0] {
            let s = synth_spectrum(&cfg, t, 0).unwrap();
            let truth = line_shape_at(&cfg, t).unwrap();
            let p = auto_initialize(&s).unwrap();
            assert!((p.f_minus_mhz - truth.f_minus_mhz).abs() < 1.0);
            assert!((p.f_plus_mhz - truth.f_plus_mhz).abs() < 1.0);
            assert!(p.validate().is_ok());
        }
    }

    #[test]
    fn auto_init_rejects_flat_and_merged() {
        let grid = SweepGrid::default().frequencies();
        let flat = Spectrum::new(grid.clone(), vec![1.0; grid.len()], None).unwrap();
        assert!(matches!(auto_initialize(&flat), Err(Error::DipDetectionFailed)));

        let merged = DoubleLorentzianParams {
            baseline: 1.0,
            contrast_minus: 0.03,
            contrast_plus: 0.03,
            f_minus_mhz: 2868.0,
            f_plus_mhz: 2872.0,
            fwhm_minus_mhz: 8.0,
            fwhm_plus_mhz: 8.0,
        };
        let v = grid.iter().map(|&f| merged.eval(f)).collect();
        let s = Spectrum::new(grid, v, None).unwrap();
        assert!(matches!(auto_initialize(&s), Err(Error::DipDetectionFailed)));
    }

    #[test]
    fn zfs_calibration_noiseless() {
        let cfg = clean_cfg();
        let spectra = vec![
            synth_spectrum(&cfg, 280.0, 0).unwrap(),
            synth_spectrum(&cfg, 285.0, 0).unwrap(),
        ];
        let z = calibrate_zfs(&spectra).unwrap();
        assert!((z.cal.alpha_khz_per_k + 74.0).abs() < 1e-3);
        assert_eq!(z.cal.t0_k, 280.0);
        assert!((z.cal.d_t0_mhz - 2870.0).abs() < 1e-6);

        let same = vec![spectra[0].clone(), spectra[0].clone()];
        assert!(matches!(
            calibrate_zfs(&same),
            Err(Error::DegenerateRegression(_))
        ));
    }

    #[test]
    fn regression_oracle() {
        let (a, b, se) = linear_regression(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((a - 1.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12 && se.abs() < 1e-12);
        // y = 0, 2, 1 on x = 0, 1, 2: b = 0.5, a = 0.5, rss = 1.5, se = sqrt(1.5 / 1 / 2)
        let (a, b, se) = linear_regression(&[0.0, 1.0, 2.0], &[0.0, 2.0, 1.0]).unwrap();
        assert!((a - 0.5).abs() < 1e-12 && (b - 0.5).abs() < 1e-12);
        assert!((se - 0.75f64.sqrt()).abs() < 1e-12);
    }
}
