//! Spin-phonon coupling analysis.
//!
//! Combines temperature-dependent vibrational spectra with spin-lattice
//! relaxation rates to extract energy-windowed coupling coefficients,
//! alongside the supporting analyses: relaxation-model fits, spectrum
//! corrections, lattice expansion, Grüneisen parameters and eigenvector
//! metrics. A forward simulator in [`synth`] produces data with known
//! ground truth for round-trip checks.
//!
//! Units are fixed throughout: energies in cm⁻¹, temperatures in K,
//! rates in µs⁻¹ and lengths in Å.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod anharm;
pub mod constants;
pub mod error;
pub mod grid;
pub mod ins;
pub mod io;
pub mod lattice;
pub mod modes;
pub mod optim;
pub mod peakfit;
pub mod quadrature;
pub mod relax;
pub mod spc;
pub mod synth;
pub mod thermal;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use grid::{integrate, resample, EnergyGrid, Provenance, Spectrum, SpectrumSet};
