//! Dispersed structured light (DSL) toolkit core.
//!
//! A projector fitted with a diffraction grating film casts a zero-order
//! (undeviated) copy of each pattern plus two wavelength-dispersed first-order
//! copies. This crate models that image formation and inverts it: binary-code
//! depth decoding that tolerates first-order leakage, a data-driven
//! first-order correspondence surrogate, and a per-pixel regularized solve for
//! a hyperspectral reflectance curve from scanline captures.
//!
//! The crate is `no_std` (it needs `alloc`). Enabling the `parallel` feature
//! distributes per-pixel work over rayon; results are identical regardless of
//! thread count.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

mod math;
mod par;

pub mod calibration;
pub mod color;
pub mod correspondence;
pub mod error;
pub mod image;
pub mod metrics;
pub mod optics;
pub mod patterns;
pub mod reconstruction;
pub mod scenes;
pub mod sim;
pub mod spectra;

pub use error::{Error, Result};
pub use image::{Cube, Image};
pub use optics::{GratingModel, Order, OrderSet, PinholeModel, Rig};
pub use spectra::{EfficiencySet, ResponseSet, SpectralCurve, WavelengthGrid};
