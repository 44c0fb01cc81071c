//! Spectral linear-stability toolkit for the Burgers vortex.
//!
//! The crate discretizes the linearized vorticity equation around the Gaussian
//! vortex on a polar spectral grid, assembles the linear operators as dense
//! per-mode blocks, computes spectra and gaps, and propagates perturbations in
//! time (exact Gaussian kernels, splitting schemes, stretched vertical modes and
//! a pseudo-spectral nonlinear stepper for the two-dimensional problem).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fields;
pub mod linalg;
pub mod spectral_grid;
pub mod biot_savart;
pub mod operators;
pub mod spectra;
pub mod propagate;

pub use error::{Error, Result};
pub use fields::{CirculationParam, WeightSpec};
pub use linalg::C64;
pub use operators::OperatorMatrix;
pub use propagate::{EvolutionTrace, EvolveOptions, FittedRate};
pub use spectra::{GrowthCurve, SpectrumReport};
pub use spectral_grid::{build_grid, FieldKind, GridSpec, ModeField, SpectralGrid};
