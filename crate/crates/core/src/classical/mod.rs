//! Model-based estimators: double-Lorentzian fitting and the 4-point method.

pub mod four_point;
pub mod lorentz_fit;

pub use four_point::{
    calibrate_four_point, default_pattern, enumerate_four_point_patterns, estimate_four_point,
    four_point_from_zfs, FourPointCalibration, FourPointPattern, DEFAULT_PATTERN_INDEX,
    PATTERN_CENTER_MHZ,
};
pub use lorentz_fit::{
    auto_initialize, calibrate_zfs, estimate_fit, fit_double_lorentzian, FitResult,
    ZfsCalibration,
};
