use alloc::string::String;

use crate::correspondence::PowerLawFit;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("wavelength grids do not match")]
    GridMismatch,

    #[error("wavelength range [{source_start}, {source_end}] nm does not overlap [{target_start}, {target_end}] nm")]
    DisjointRange {
        source_start: f64,
        source_end: f64,
        target_start: f64,
        target_end: f64,
    },

    #[error("depth must be positive, got {0} mm")]
    NonPositiveDepth(f64),

    #[error("point lies at or behind the device center")]
    BehindDevice,

    #[error("diffraction order is evanescent (|d_xy| = {0:.6} >= 1)")]
    Evanescent(f64),

    #[error("no grating point satisfies the diffraction constraint")]
    NoSolution,

    #[error("grating solve did not converge (residual {0:e})")]
    NoConvergence(f64),

    #[error("power-law fit did not converge (best rms {rms:e})", rms = .best.rms)]
    FitFailed { best: PowerLawFit },

    #[error("query outside the correspondence model hull: {0}")]
    OutOfHull(&'static str),

    #[error("order {0} is not modeled by the first-order surrogate")]
    UnsupportedOrder(i32),

    #[error("projector column {0} is not covered by any scanline pattern")]
    Coverage(f64),

    #[error("curve has no positive maximum; FWHM undefined")]
    UndefinedFwhm,

    #[error("division by near-zero zero-order intensity at {0} nm")]
    ZeroReference(f64),

    #[error("empty mask: no pixels to evaluate")]
    EmptyMask,

    #[error("system has no observations")]
    EmptySystem,

    #[error("optimization diverged after {0} step halvings")]
    Diverged(usize),
}
