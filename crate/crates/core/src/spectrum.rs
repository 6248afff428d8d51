//! Spectrum data model, the double-Lorentzian line shape, and the linear
//! ZFS-temperature law shared by every estimator.
//!
//! Units: frequencies and D in MHz, the thermal slope alpha in kHz/K,
//! temperatures in K. The only place the kHz/MHz factor appears is in
//! [`CalibrationModel`].

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ODMR spectrum: PL intensity sampled on a strictly increasing
/// frequency grid, optionally labeled with the true temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpectrum", into = "RawSpectrum")]
pub struct Spectrum {
    frequencies_mhz: Vec<f64>,
    intensities: Vec<f64>,
    true_temperature_k: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawSpectrum {
    frequencies_mhz: Vec<f64>,
    intensities: Vec<f64>,
    #[serde(default)]
    true_temperature_k: Option<f64>,
}

impl TryFrom<RawSpectrum> for Spectrum {
    type Error = Error;

    fn try_from(raw: RawSpectrum) -> Result<Self> {
        Spectrum::new(raw.frequencies_mhz, raw.intensities, raw.true_temperature_k)
    }
}

impl From<Spectrum> for RawSpectrum {
    fn from(s: Spectrum) -> Self {
        RawSpectrum {
            frequencies_mhz: s.frequencies_mhz,
            intensities: s.intensities,
            true_temperature_k: s.true_temperature_k,
        }
    }
}

impl Spectrum {
    pub fn new(
        frequencies_mhz: Vec<f64>,
        intensities: Vec<f64>,
        true_temperature_k: Option<f64>,
    ) -> Result<Self> {
        if frequencies_mhz.len() != intensities.len() {
            return Err(Error::InvalidSpectrum(format!(
                "{} frequencies but {} intensities",
                frequencies_mhz.len(),
                intensities.len()
            )));
        }
        if frequencies_mhz.len() < 2 {
            return Err(Error::InvalidSpectrum("fewer than 2 points".into()));
        }
        if frequencies_mhz.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return Err(Error::InvalidSpectrum(
                "frequencies must be finite and positive".into(),
            ));
        }
        if frequencies_mhz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSpectrum(
                "frequencies must be strictly increasing".into(),
            ));
        }
        if intensities.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpectrum("intensities must be finite".into()));
        }
        if let Some(t) = true_temperature_k {
            if !t.is_finite() {
                return Err(Error::InvalidSpectrum("temperature label must be finite".into()));
            }
        }
        Ok(Spectrum {
            frequencies_mhz,
            intensities,
            true_temperature_k,
        })
    }

    pub fn frequencies_mhz(&self) -> &[f64] {
        &self.frequencies_mhz
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn true_temperature_k(&self) -> Option<f64> {
        self.true_temperature_k
    }

    pub fn len(&self) -> usize {
        self.frequencies_mhz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies_mhz.is_empty()
    }

    pub fn with_label(mut self, t_k: Option<f64>) -> Self {
        self.true_temperature_k = t_k;
        self
    }

    /// Every intensity multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Spectrum> {
        Spectrum::new(
            self.frequencies_mhz.clone(),
            self.intensities.iter().map(|v| v * factor).collect(),
            self.true_temperature_k,
        )
    }

    fn pick(&self, indices: &[usize]) -> Spectrum {
        Spectrum {
            frequencies_mhz: indices.iter().map(|&i| self.frequencies_mhz[i]).collect(),
            intensities: indices.iter().map(|&i| self.intensities[i]).collect(),
            true_temperature_k: self.true_temperature_k,
        }
    }

    /// Parses the CSV exchange format: optional `#` comment lines, then the
    /// `frequency_mhz,intensity` header, then one row per point.
    pub fn from_csv_str(text: &str, origin: &Path) -> Result<Spectrum> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            message: format!("line {line}: {message}"),
        };
        let mut label = None;
        let mut header_seen = false;
        let mut freqs = Vec::new();
        let mut values = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if !header_seen {
                if let Some(comment) = line.strip_prefix('#') {
                    if let Some(v) = comment.trim().strip_prefix("true_temperature_k=") {
                        let t: f64 = v.trim().parse().map_err(|_| {
                            parse_err(line_no, format!("bad temperature label {v:?}"))
                        })?;
                        label = Some(t);
                    }
                    continue;
                }
                if line.trim() != "frequency_mhz,intensity" {
                    return Err(parse_err(
                        line_no,
                        "expected header `frequency_mhz,intensity`".into(),
                    ));
                }
                header_seen = true;
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (f, v) = line
                .split_once(',')
                .ok_or_else(|| parse_err(line_no, "expected two columns".into()))?;
            let f: f64 = f
                .trim()
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad frequency {f:?}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad intensity {v:?}")))?;
            freqs.push(f);
            values.push(v);
        }
        if !header_seen {
            return Err(parse_err(0, "missing header".into()));
        }
        Spectrum::new(freqs, values, label).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn read_csv(path: &Path) -> Result<Spectrum> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Spectrum::from_csv_str(&text, path)
    }

    /// Serializes to the CSV exchange format. Numbers use the shortest
    /// representation that parses back to the same `f64`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(32 * self.len() + 64);
        if let Some(t) = self.true_temperature_k {
            let _ = writeln!(out, "# true_temperature_k={t}");
        }
        out.push_str("frequency_mhz,intensity\n");
        for (f, v) in self.frequencies_mhz.iter().zip(&self.intensities) {
            let _ = writeln!(out, "{f},{v}");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Microwave sweep: `n_points` equally spaced frequencies including both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub f_start_mhz: f64,
    pub f_stop_mhz: f64,
    pub n_points: usize,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_start_mhz.is_finite() && self.f_stop_mhz.is_finite()) {
            return Err(Error::InvalidParams("grid bounds must be finite".into()));
        }
        if self.f_start_mhz <= 0.0 || self.f_start_mhz >= self.f_stop_mhz {
            return Err(Error::InvalidParams(
                "grid requires 0 < f_start < f_stop".into(),
            ));
        }
        if self.n_points < 2 {
            return Err(Error::InvalidParams("grid needs at least 2 points".into()));
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.n_points;
        let step = (self.f_stop_mhz - self.f_start_mhz) / (n - 1) as f64;
        (0..n)
            .map(|i| {
                if i == n - 1 {
                    self.f_stop_mhz
                } else {
                    self.f_start_mhz + i as f64 * step
                }
            })
            .collect()
    }
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            f_start_mhz: 2830.0,
            f_stop_mhz: 2910.0,
            n_points: 321,
        }
    }
}

/// Number of free parameters in the double-Lorentzian model.
pub const N_LINE_PARAMS: usize = 7;

/// Two Lorentzian dips below a flat baseline:
///
/// `I(f) = b * (1 - sum_k c_k * g_k / ((f - f_k)^2 + g_k))`, `g_k = (w_k / 2)^2`
///
/// with `w_k` the full width at half maximum of dip `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleLorentzianParams {
    pub baseline: f64,
    pub contrast_minus: f64,
    pub contrast_plus: f64,
    pub f_minus_mhz: f64,
    pub f_plus_mhz: f64,
    pub fwhm_minus_mhz: f64,
    pub fwhm_plus_mhz: f64,
}

#[inline]
fn lorentz(x: f64, fwhm: f64) -> f64 {
    let g = 0.25 * fwhm * fwhm;
    g / (x * x + g)
}

impl DoubleLorentzianParams {
    pub fn validate(&self) -> Result<()> {
        let v = self.to_vec();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParams("non-finite line-shape parameter".into()));
        }
        if self.baseline <= 0.0 {
            return Err(Error::InvalidParams("baseline must be positive".into()));
        }
        for c in [self.contrast_minus, self.contrast_plus] {
            if !(c > 0.0 && c < 1.0) {
                return Err(Error::InvalidParams("contrasts must lie in (0, 1)".into()));
            }
        }
        if self.fwhm_minus_mhz <= 0.0 || self.fwhm_plus_mhz <= 0.0 {
            return Err(Error::InvalidParams("widths must be positive".into()));
        }
        if self.f_minus_mhz >= self.f_plus_mhz {
            return Err(Error::InvalidParams("requires f_minus < f_plus".into()));
        }
        Ok(())
    }

    /// Parameter vector in the order
    /// `[baseline, c-, c+, f-, f+, w-, w+]`.
    pub fn to_vec(&self) -> [f64; N_LINE_PARAMS] {
        [
            self.baseline,
            self.contrast_minus,
            self.contrast_plus,
            self.f_minus_mhz,
            self.f_plus_mhz,
            self.fwhm_minus_mhz,
            self.fwhm_plus_mhz,
        ]
    }

    pub fn from_slice(p: &[f64]) -> Self {
        DoubleLorentzianParams {
            baseline: p[0],
            contrast_minus: p[1],
            contrast_plus: p[2],
            f_minus_mhz: p[3],
            f_plus_mhz: p[4],
            fwhm_minus_mhz: p[5],
            fwhm_plus_mhz: p[6],
        }
    }

    /// Same shape with both dips moved by `delta_mhz`.
    pub fn shifted(&self, delta_mhz: f64) -> Self {
        DoubleLorentzianParams {
            f_minus_mhz: self.f_minus_mhz + delta_mhz,
            f_plus_mhz: self.f_plus_mhz + delta_mhz,
            ..*self
        }
    }

    /// Swaps the (-) and (+) dips, then restores `f_minus < f_plus` order
    /// if it was broken.
    pub fn normalized_order(&self) -> Self {
        if self.f_minus_mhz <= self.f_plus_mhz {
            return *self;
        }
        DoubleLorentzianParams {
            baseline: self.baseline,
            contrast_minus: self.contrast_plus,
            contrast_plus: self.contrast_minus,
            f_minus_mhz: self.f_plus_mhz,
            f_plus_mhz: self.f_minus_mhz,
            fwhm_minus_mhz: self.fwhm_plus_mhz,
            fwhm_plus_mhz: self.fwhm_minus_mhz,
        }
    }

    pub fn eval(&self, f_mhz: f64) -> f64 {
        eval_double_lorentzian(self, f_mhz)
    }

    /// dI/df at `f_mhz`.
    pub fn slope(&self, f_mhz: f64) -> f64 {
        let dip = |c: f64, f0: f64, w: f64| {
            let x = f_mhz - f0;
            let g = 0.25 * w * w;
            let den = x * x + g;
            2.0 * c * g * x / (den * den)
        };
        self.baseline
            * (dip(self.contrast_minus, self.f_minus_mhz, self.fwhm_minus_mhz)
                + dip(self.contrast_plus, self.f_plus_mhz, self.fwhm_plus_mhz))
    }

    /// Partial derivatives of `I(f)` with respect to the parameter vector
    /// (same order as [`Self::to_vec`]).
    pub fn gradient(&self, f_mhz: f64) -> [f64; N_LINE_PARAMS] {
        let b = self.baseline;
        let parts = |c: f64, f0: f64, w: f64| {
            let x = f_mhz - f0;
            let g = 0.25 * w * w;
            let den = x * x + g;
            let l = g / den;
            let dl_df0 = 2.0 * g * x / (den * den);
            let dl_dw = x * x / (den * den) * 0.5 * w;
            (l, -b * l, -b * c * dl_df0, -b * c * dl_dw)
        };
        let (lm, d_cm, d_fm, d_wm) =
            parts(self.contrast_minus, self.f_minus_mhz, self.fwhm_minus_mhz);
        let (lp, d_cp, d_fp, d_wp) = parts(self.contrast_plus, self.f_plus_mhz, self.fwhm_plus_mhz);
        let d_b = 1.0 - self.contrast_minus * lm - self.contrast_plus * lp;
        [d_b, d_cm, d_cp, d_fm, d_fp, d_wm, d_wp]
    }
}

/// Intensity of the double-Lorentzian model at `f_mhz`.
pub fn eval_double_lorentzian(params: &DoubleLorentzianParams, f_mhz: f64) -> f64 {
    let dips = params.contrast_minus * lorentz(f_mhz - params.f_minus_mhz, params.fwhm_minus_mhz)
        + params.contrast_plus * lorentz(f_mhz - params.f_plus_mhz, params.fwhm_plus_mhz);
    params.baseline * (1.0 - dips)
}

/// Zero-field splitting: midpoint of the two resonances.
pub fn zfs_from_params(params: &DoubleLorentzianParams) -> f64 {
    0.5 * (params.f_minus_mhz + params.f_plus_mhz)
}

/// Linear ZFS law `D(T) = alpha * (T - T0) + D(T0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub alpha_khz_per_k: f64,
    pub t0_k: f64,
    pub d_t0_mhz: f64,
}

impl CalibrationModel {
    pub fn new(alpha_khz_per_k: f64, t0_k: f64, d_t0_mhz: f64) -> Result<Self> {
        let cal = CalibrationModel {
            alpha_khz_per_k,
            t0_k,
            d_t0_mhz,
        };
        cal.validate()?;
        Ok(cal)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_khz_per_k.is_finite() && self.t0_k.is_finite() && self.d_t0_mhz.is_finite())
        {
            return Err(Error::InvalidParams("calibration must be finite".into()));
        }
        if self.alpha_khz_per_k == 0.0 {
            return Err(Error::InvalidParams("alpha must be non-zero".into()));
        }
        Ok(())
    }

    pub fn alpha_mhz_per_k(&self) -> f64 {
        self.alpha_khz_per_k / 1000.0
    }

    pub fn zfs_to_temperature(&self, d_mhz: f64) -> Result<f64> {
        zfs_to_temperature(self, d_mhz)
    }

    pub fn temperature_to_zfs(&self, t_k: f64) -> Result<f64> {
        temperature_to_zfs(self, t_k)
    }
}

pub fn zfs_to_temperature(cal: &CalibrationModel, d_mhz: f64) -> Result<f64> {
    if !d_mhz.is_finite() {
        return Err(Error::NonFinite("zfs"));
    }
    Ok(cal.t0_k + (d_mhz - cal.d_t0_mhz) * 1000.0 / cal.alpha_khz_per_k)
}

pub fn temperature_to_zfs(cal: &CalibrationModel, t_k: f64) -> Result<f64> {
    if !t_k.is_finite() {
        return Err(Error::NonFinite("temperature"));
    }
    Ok(cal.alpha_khz_per_k / 1000.0 * (t_k - cal.t0_k) + cal.d_t0_mhz)
}

/// Source indices kept by [`subsample_equally_spaced`]:
/// `round(j * (len - 1) / (n_p - 1))`.
pub fn equally_spaced_indices(len: usize, n_p: usize) -> Result<Vec<usize>> {
    if n_p < 2 || n_p > len {
        return Err(Error::OutOfRange(format!(
            "n_p = {n_p} must lie in [2, {len}]"
        )));
    }
    let span = len - 1;
    let div = n_p - 1;
    // round-half-up in integer arithmetic
    Ok((0..n_p).map(|j| (2 * j * span + div) / (2 * div)).collect())
}

pub fn subsample_equally_spaced(s: &Spectrum, n_p: usize) -> Result<Spectrum> {
    let idx = equally_spaced_indices(s.len(), n_p)?;
    Ok(s.pick(&idx))
}

/// Index of the grid point nearest to `target`; ties go to the lower
/// frequency.
pub fn nearest_index(freqs: &[f64], target: f64) -> Result<usize> {
    let first = freqs[0];
    let last = freqs[freqs.len() - 1];
    if !target.is_finite() || target < first || target > last {
        return Err(Error::OutOfRange(format!(
            "target {target} MHz outside [{first}, {last}]"
        )));
    }
    let hi = freqs.partition_point(|&f| f < target);
    if hi == 0 {
        return Ok(0);
    }
    let lo = hi - 1;
    if hi == freqs.len() {
        return Ok(lo);
    }
    if freqs[hi] - target < target - freqs[lo] {
        Ok(hi)
    } else {
        Ok(lo)
    }
}

/// Nearest-grid-point selection, sorted ascending.
pub fn select_frequencies(s: &Spectrum, targets_mhz: &[f64]) -> Result<Spectrum> {
    if targets_mhz.is_empty() {
        return Err(Error::OutOfRange("no target frequencies".into()));
    }
    let mut picked: Vec<(usize, f64)> = targets_mhz
        .iter()
        .map(|&t| nearest_index(&s.frequencies_mhz, t).map(|i| (i, t)))
        .collect::<Result<_>>()?;
    picked.sort_by_key(|&(i, _)| i);
    if let Some(w) = picked.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::DuplicateSelection {
            first: w[0].1,
            second: w[1].1,
        });
    }
    let idx: Vec<usize> = picked.into_iter().map(|(i, _)| i).collect();
    let out = s.pick(&idx);
    if out.len() < 2 {
        // a one-point selection is not a spectrum
        return Err(Error::InvalidSpectrum("selection has fewer than 2 points".into()));
    }
    Ok(out)
}

/// Which frequency points an analysis keeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointSelection {
    All,
    /// `n_p` equally spaced points including both ends.
    EquallySpaced(usize),
    /// Nearest grid points to explicit frequencies (MHz).
    Frequencies(Vec<f64>),
}

impl PointSelection {
    pub fn apply(&self, s: &Spectrum) -> Result<Spectrum> {
        match self {
            PointSelection::All => Ok(s.clone()),
            PointSelection::EquallySpaced(n) => subsample_equally_spaced(s, *n),
            PointSelection::Frequencies(f) => select_frequencies(s, f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> DoubleLorentzianParams {
        DoubleLorentzianParams {
            baseline: 1.0,
            contrast_minus: 0.02,
            contrast_plus: 0.02,
            f_minus_mhz: 2860.0,
            f_plus_mhz: 2880.0,
            fwhm_minus_mhz: 8.0,
            fwhm_plus_mhz: 8.0,
        }
    }

    fn grid_spectrum() -> Spectrum {
        let f = SweepGrid::default().frequencies();
        let v = f.iter().map(|&x| params().eval(x)).collect();
        Spectrum::new(f, v, Some(281.0)).unwrap()
    }

    #[test]
    fn lorentzian_hand_value() {
        let expected = 1.0 - 0.02 * 16.0 / 32.0 - 0.02 * 16.0 / 272.0;
        assert!((params().eval(2864.0) - expected).abs() < 1e-15);
        assert!((expected - 0.98882).abs() < 1e-5);
    }

    #[test]
    fn lorentzian_dip_bottom_and_far_limit() {
        let p = params();
        let tail = 0.02 * 16.0 / (400.0 + 16.0);
        assert!((p.eval(2860.0) - (1.0 - 0.02 - tail)).abs() < 1e-15);
        assert!((p.eval(1.0e7) - 1.0).abs() < 1e-9);
        assert!((p.eval(-1.0e7) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn slope_and_gradient_match_finite_differences() {
        let p = DoubleLorentzianParams {
            contrast_plus: 0.03,
            fwhm_plus_mhz: 11.0,
            ..params()
        };
        for f in [2850.0, 2861.3, 2870.0, 2883.7] {
            let h = 1e-5;
            let fd = (p.eval(f + h) - p.eval(f - h)) / (2.0 * h);
            assert!((p.slope(f) - fd).abs() < 1e-9, "slope at {f}");
            let g = p.gradient(f);
            let v = p.to_vec();
            for k in 0..N_LINE_PARAMS {
                let step = 1e-6 * v[k].abs().max(1.0);
                let mut up = v;
                let mut dn = v;
                up[k] += step;
                dn[k] -= step;
                let fd = (DoubleLorentzianParams::from_slice(&up).eval(f)
                    - DoubleLorentzianParams::from_slice(&dn).eval(f))
                    / (2.0 * step);
                assert!((g[k] - fd).abs() < 1e-7, "param {k} at {f}: {} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn zfs_midpoint() {
        assert_eq!(zfs_from_params(&params()), 2870.0);
        let p = DoubleLorentzianParams {
            f_minus_mhz: 2857.2,
            f_plus_mhz: 2882.6,
            ..params()
        };
        assert!((zfs_from_params(&p) - 2869.9).abs() < 1e-9);
        let eps = 1e-3;
        let q = DoubleLorentzianParams {
            f_minus_mhz: 2880.0 - eps,
            ..params()
        };
        let d = zfs_from_params(&q);
        assert!(d > q.f_minus_mhz && d < q.f_plus_mhz);
        assert!((d - q.f_plus_mhz).abs() <= eps / 2.0 + 1e-12);
    }

    #[test]
    fn temperature_conversions() {
        let cal = CalibrationModel::new(-74.0, 280.0, 2870.0).unwrap();
        assert_eq!(cal.zfs_to_temperature(2870.0).unwrap(), 280.0);
        assert!((cal.zfs_to_temperature(2869.926).unwrap() - 281.0).abs() < 1e-9);
        assert_eq!(cal.temperature_to_zfs(280.0).unwrap(), 2870.0);
        let cal2 = CalibrationModel::new(-80.8, 280.0, 2870.0).unwrap();
        let dd = cal2.temperature_to_zfs(285.0).unwrap() - 2870.0;
        assert!((dd + 0.404).abs() < 1e-9);
        assert!(cal.zfs_to_temperature(f64::NAN).is_err());
        assert!(cal.temperature_to_zfs(f64::INFINITY).is_err());
        assert!(CalibrationModel::new(0.0, 280.0, 2870.0).is_err());
    }

    #[test]
    fn subsample_indices() {
        assert_eq!(equally_spaced_indices(321, 2).unwrap(), vec![0, 320]);
        assert_eq!(
            equally_spaced_indices(321, 11).unwrap(),
            vec![0, 32, 64, 96, 128, 160, 192, 224, 256, 288, 320]
        );
        // oracle: f64 rounding of the same formula
        for (len, n) in [(321, 7), (321, 41), (10, 4), (5, 3), (100, 33)] {
            let oracle: Vec<usize> = (0..n)
                .map(|j| ((j * (len - 1)) as f64 / (n - 1) as f64).round() as usize)
                .collect();
            assert_eq!(equally_spaced_indices(len, n).unwrap(), oracle);
        }
        let s = grid_spectrum();
        assert_eq!(subsample_equally_spaced(&s, s.len()).unwrap(), s);
        assert!(subsample_equally_spaced(&s, 1).is_err());
        assert!(subsample_equally_spaced(&s, 322).is_err());
        let sub = subsample_equally_spaced(&s, 11).unwrap();
        assert_eq!(sub.true_temperature_k(), Some(281.0));
        assert_eq!(sub.frequencies_mhz()[1], 2838.0);
    }

    #[test]
    fn select_exact_and_nearest() {
        let s = grid_spectrum();
        let sel = select_frequencies(&s, &[2886.0, 2854.0, 2884.0, 2856.0]).unwrap();
        assert_eq!(sel.frequencies_mhz(), &[2854.0, 2856.0, 2884.0, 2886.0]);
        let sel = select_frequencies(&s, &[2854.13, 2900.0]).unwrap();
        assert_eq!(sel.frequencies_mhz()[0], 2854.25);
        // brute-force nearest scan
        let freqs = s.frequencies_mhz();
        for t in [2830.0, 2830.1, 2854.13, 2871.874, 2909.99, 2910.0] {
            let brute = (0..freqs.len())
                .min_by(|&a, &b| {
                    (freqs[a] - t)
                        .abs()
                        .partial_cmp(&(freqs[b] - t).abs())
                        .unwrap()
                        .then(a.cmp(&b))
                })
                .unwrap();
            assert_eq!(nearest_index(freqs, t).unwrap(), brute, "target {t}");
        }
        // exact tie goes low
        assert_eq!(nearest_index(freqs, 2854.125).unwrap(), 96);
    }

    #[test]
    fn select_errors() {
        let s = grid_spectrum();
        assert!(matches!(
            select_frequencies(&s, &[2829.0, 2850.0]),
            Err(Error::OutOfRange(_))
        ));
        assert!(matches!(
            select_frequencies(&s, &[2854.0, 2854.05]),
            Err(Error::DuplicateSelection { .. })
        ));
    }

    #[test]
    fn spectrum_invariants_rejected() {
        assert!(Spectrum::new(vec![1.0, 2.0], vec![1.0], None).is_err());
        assert!(Spectrum::new(vec![1.0], vec![1.0], None).is_err());
        assert!(Spectrum::new(vec![2.0, 1.0], vec![1.0, 1.0], None).is_err());
        assert!(Spectrum::new(vec![1.0, 1.0], vec![1.0, 1.0], None).is_err());
        assert!(Spectrum::new(vec![-1.0, 1.0], vec![1.0, 1.0], None).is_err());
        assert!(Spectrum::new(vec![1.0, 2.0], vec![f64::NAN, 1.0], None).is_err());
    }

    #[test]
    fn csv_round_trip_and_comments() {
        let s = grid_spectrum();
        let text = s.to_csv_string();
        assert!(text.starts_with("# true_temperature_k=281\nfrequency_mhz,intensity\n2830,"));
        let back = Spectrum::from_csv_str(&text, Path::new("mem")).unwrap();
        assert_eq!(back, s);

        let text = "# acquired somewhere\n# true_temperature_k=282.5\nfrequency_mhz,intensity\n2854,0.99\n2856,0.98\n";
        let s = Spectrum::from_csv_str(text, Path::new("mem")).unwrap();
        assert_eq!(s.true_temperature_k(), Some(282.5));
        assert_eq!(s.intensities(), &[0.99, 0.98]);

        let bad = "freq,int\n1,2\n";
        assert!(Spectrum::from_csv_str(bad, Path::new("mem")).is_err());
        let bad = "frequency_mhz,intensity\n1;2\n3,4\n";
        assert!(Spectrum::from_csv_str(bad, Path::new("mem")).is_err());
    }

    fn arb_params() -> impl Strategy<Value = DoubleLorentzianParams> {
        (
            0.5f64..2.0,
            0.001f64..0.4,
            0.001f64..0.4,
            2840.0f64..2868.0,
            0.5f64..30.0,
            0.5f64..20.0,
            0.5f64..20.0,
        )
            .prop_map(|(b, cm, cp, fm, gap, wm, wp)| DoubleLorentzianParams {
                baseline: b,
                contrast_minus: cm,
                contrast_plus: cp,
                f_minus_mhz: fm,
                f_plus_mhz: fm + gap,
                fwhm_minus_mhz: wm,
                fwhm_plus_mhz: wp,
            })
    }

    proptest! {
        #[test]
        fn swap_symmetry_and_baseline_bound(p in arb_params(), f in 2800.0f64..2940.0) {
            let swapped = DoubleLorentzianParams {
                contrast_minus: p.contrast_plus,
                contrast_plus: p.contrast_minus,
                f_minus_mhz: p.f_plus_mhz,
                f_plus_mhz: p.f_minus_mhz,
                fwhm_minus_mhz: p.fwhm_plus_mhz,
                fwhm_plus_mhz: p.fwhm_minus_mhz,
                ..p
            };
            let v = p.eval(f);
            prop_assert!((v - swapped.eval(f)).abs() <= 1e-15 * v.abs().max(1.0));
            prop_assert!(v < p.baseline);
            prop_assert!(v > p.baseline * (1.0 - p.contrast_minus - p.contrast_plus));
        }

        #[test]
        fn eq1_round_trip(alpha in prop_oneof![Just(-74.0), Just(-80.8), -200.0f64..-1.0],
                          dt in -100.0f64..100.0) {
            let cal = CalibrationModel::new(alpha, 280.0, 2870.0).unwrap();
            let t = 280.0 + dt;
            let back = cal.zfs_to_temperature(cal.temperature_to_zfs(t).unwrap()).unwrap();
            prop_assert!((back - t).abs() <= 1e-9);
        }

        #[test]
        fn subsample_is_subsequence(n in 2usize..=321) {
            let s = grid_spectrum();
            let sub = subsample_equally_spaced(&s, n).unwrap();
            prop_assert_eq!(sub.len(), n);
            prop_assert_eq!(sub.frequencies_mhz()[0], 2830.0);
            prop_assert_eq!(sub.frequencies_mhz()[n - 1], 2910.0);
            let mut it = s.frequencies_mhz().iter();
            for f in sub.frequencies_mhz() {
                prop_assert!(it.any(|x| x == f));
            }
        }

        #[test]
        fn selection_strictly_increasing(targets in proptest::collection::vec(2830.0f64..2910.0, 2..8)) {
            let s = grid_spectrum();
            if let Ok(sel) = select_frequencies(&s, &targets) {
                prop_assert!(sel.frequencies_mhz().windows(2).all(|w| w[0] < w[1]));
                prop_assert_eq!(sel.len(), targets.len());
            }
        }
    }
}
