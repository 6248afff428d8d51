//! The 4-point method: intensities at four flank frequencies, compared
//! with a calibrated reference spectrum to first order in a rigid shift.
//!
//! With reference intensities `I_ref` and flank slopes `s = dI/df`, a shift
//! `δD` changes the intensities by `ΔI ≈ -s δD`. Least squares over the four
//! points gives `δD = Σ s (I_ref - I) / Σ s²`.

use serde::{Deserialize, Serialize};

use super::lorentz_fit::{calibrate_zfs, ZfsCalibration};
use crate::error::{Error, Result};
use crate::spectrum::{nearest_index, CalibrationModel, Spectrum};

/// Center the table patterns are measured from.
pub const PATTERN_CENTER_MHZ: f64 = 2870.0;

/// Tolerance for a pattern frequency to count as present in a spectrum.
const FREQUENCY_MATCH_MHZ: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourPointPattern {
    frequencies_mhz: [f64; 4],
}

impl FourPointPattern {
    /// Two frequencies below `center`, two above, strictly increasing.
    pub fn new(frequencies_mhz: [f64; 4], center_mhz: f64) -> Result<Self> {
        let f = frequencies_mhz;
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("pattern frequencies must be finite".into()));
        }
        if !(f[0] < f[1] && f[1] < center_mhz && center_mhz < f[2] && f[2] < f[3]) {
            return Err(Error::InvalidParams(format!(
                "pattern {f:?} must satisfy f1 < f2 < {center_mhz} < f3 < f4"
            )));
        }
        Ok(FourPointPattern { frequencies_mhz })
    }

    pub fn from_offsets(offsets_mhz: [f64; 4], center_mhz: f64) -> Result<Self> {
        Self::new(offsets_mhz.map(|o| center_mhz + o), center_mhz)
    }

    pub fn frequencies_mhz(&self) -> [f64; 4] {
        self.frequencies_mhz
    }

    pub fn offsets_mhz(&self, center_mhz: f64) -> [f64; 4] {
        self.frequencies_mhz.map(|f| f - center_mhz)
    }

    pub fn is_symmetric(&self, center_mhz: f64) -> bool {
        let o = self.offsets_mhz(center_mhz);
        (o[0] + o[3]).abs() < 1e-9 && (o[1] + o[2]).abs() < 1e-9
    }
}

/// Symmetric patterns with both flank points `inner..=outer` MHz from
/// the center on a `step` MHz raster, ordered by descending outer then
/// descending inner offset.
pub fn symmetric_patterns(inner_mhz: u32, outer_mhz: u32, step_mhz: u32) -> Vec<[i32; 4]> {
    let mut offsets: Vec<i32> = (inner_mhz..=outer_mhz)
        .step_by(step_mhz as usize)
        .map(|v| v as i32)
        .collect();
    offsets.reverse();
    let mut out = Vec::new();
    for (i, &outer) in offsets.iter().enumerate() {
        for &inner in &offsets[i + 1..] {
            out.push([-outer, -inner, inner, outer]);
        }
    }
    out
}

/// The fifteen 4-point patterns studied, as `[Index 1 .. Index 15]`:
/// flank points 10 to 20 MHz from 2870 MHz on a 2 MHz raster.
pub fn enumerate_four_point_patterns() -> Vec<FourPointPattern> {
    symmetric_patterns(10, 20, 2)
        .into_iter()
        .map(|o| {
            FourPointPattern::from_offsets(o.map(f64::from), PATTERN_CENTER_MHZ)
                .expect("table patterns are valid")
        })
        .collect()
}

/// Table index (1-based) of the pattern used as the default 4-point
/// configuration, offsets (-16, -14, 14, 16).
pub const DEFAULT_PATTERN_INDEX: usize = 10;

pub fn default_pattern() -> FourPointPattern {
    enumerate_four_point_patterns()[DEFAULT_PATTERN_INDEX - 1]
}

/// Experimental RMSEs (K) reported for each table pattern as
/// `(GPR, 4-point)`. Reference context only.
pub const EXPERIMENTAL_PATTERN_RMSE_K: [(f64, f64); 15] = [
    (1.5960, 3.8031),
    (1.2137, 3.4996),
    (1.0409, 2.3711),
    (0.8251, 2.5814),
    (1.3989, 3.8989),
    (1.5120, 1.0629),
    (0.8915, 0.3540),
    (0.8109, 0.6848),
    (1.3751, 1.3421),
    (0.6561, 0.8920),
    (0.7113, 0.9174),
    (1.2496, 1.3424),
    (0.7879, 0.9265),
    (0.9715, 1.0014),
    (0.7055, 1.1040),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourPointCalibration {
    pub pattern: FourPointPattern,
    pub reference_intensities: [f64; 4],
    /// dI/df at each pattern frequency (per MHz).
    pub slopes: [f64; 4],
    pub cal: CalibrationModel,
    pub t_ref_k: f64,
}

impl FourPointCalibration {
    pub fn d_ref_mhz(&self) -> Result<f64> {
        self.cal.temperature_to_zfs(self.t_ref_k)
    }
}

/// Intensities of `s` at the pattern frequencies; each must be on the grid.
pub fn pattern_intensities(s: &Spectrum, pattern: &FourPointPattern) -> Result<[f64; 4]> {
    let freqs = s.frequencies_mhz();
    let mut out = [0.0; 4];
    for (o, &f) in out.iter_mut().zip(&pattern.frequencies_mhz) {
        let i = nearest_index(freqs, f).map_err(|_| Error::PatternFrequencyMissing(f))?;
        if (freqs[i] - f).abs() > FREQUENCY_MATCH_MHZ {
            return Err(Error::PatternFrequencyMissing(f));
        }
        *o = s.intensities()[i];
    }
    Ok(out)
}

/// Builds a 4-point calibration from an existing D-vs-T calibration, so
/// that several patterns can share one alpha.
///
/// The reference spectrum is the calibration spectrum whose temperature is
/// nearest `t_ref_k` (default: the lowest calibration temperature). If the
/// two differ, the measured intensities are carried to `t_ref_k` by the
/// change of that spectrum's fitted line shape under the calibrated shift.
pub fn four_point_from_zfs(
    zfs: &ZfsCalibration,
    spectra: &[Spectrum],
    pattern: &FourPointPattern,
    t_ref_k: Option<f64>,
) -> Result<FourPointCalibration> {
    if spectra.len() != zfs.fits.len() || spectra.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: zfs.fits.len(),
            got: spectra.len(),
        });
    }
    let t_ref = t_ref_k.unwrap_or(zfs.cal.t0_k);
    let nearest = (0..spectra.len())
        .min_by(|&a, &b| {
            (zfs.temperatures_k[a] - t_ref)
                .abs()
                .total_cmp(&(zfs.temperatures_k[b] - t_ref).abs())
                .then(a.cmp(&b))
        })
        .expect("non-empty");
    let measured = pattern_intensities(&spectra[nearest], pattern)?;
    let fitted = zfs.fits[nearest].params;
    let shift = zfs.cal.alpha_mhz_per_k() * (t_ref - zfs.temperatures_k[nearest]);
    let at_ref = fitted.shifted(shift);
    let f = pattern.frequencies_mhz;
    let mut reference_intensities = [0.0; 4];
    let mut slopes = [0.0; 4];
    for k in 0..4 {
        reference_intensities[k] = measured[k] + at_ref.eval(f[k]) - fitted.eval(f[k]);
        slopes[k] = at_ref.slope(f[k]);
    }
    let low_sign = slopes[0].signum();
    if slopes[1].signum() != low_sign
        || slopes[2].signum() != -low_sign
        || slopes[3].signum() != -low_sign
    {
        return Err(Error::InvalidParams(format!(
            "pattern points do not sit on opposing flanks (slopes {slopes:?})"
        )));
    }
    Ok(FourPointCalibration {
        pattern: *pattern,
        reference_intensities,
        slopes,
        cal: zfs.cal,
        t_ref_k: t_ref,
    })
}

/// Fits the labeled calibration spectra, derives alpha, and builds the
/// 4-point reference for `pattern`.
pub fn calibrate_four_point(
    calibration_spectra: &[Spectrum],
    pattern: &FourPointPattern,
) -> Result<FourPointCalibration> {
    let zfs = calibrate_zfs(calibration_spectra)?;
    four_point_from_zfs(&zfs, calibration_spectra, pattern, None)
}

/// Shift of `s` relative to the reference, `Σ s (I_ref - I) / Σ s²`.
pub fn estimate_shift(cal: &FourPointCalibration, s: &Spectrum) -> Result<f64> {
    let current = pattern_intensities(s, &cal.pattern)?;
    let num: f64 = (0..4)
        .map(|k| cal.slopes[k] * (cal.reference_intensities[k] - current[k]))
        .sum();
    let den: f64 = cal.slopes.iter().map(|v| v * v).sum();
    Ok(num / den)
}

pub fn estimate_four_point(cal: &FourPointCalibration, s: &Spectrum) -> Result<f64> {
    let delta = estimate_shift(cal, s)?;
    cal.cal.zfs_to_temperature(cal.d_ref_mhz()? + delta)
}
