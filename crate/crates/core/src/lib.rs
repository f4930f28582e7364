//! Kinetic Fokker-Planck model of endothelial tip cells on an annulus,
//! coupled to a diffusing tumor angiogenic factor.
//!
//! The tip density p(t, x, v) lives on `r0 < |x| < r1` times a velocity box
//! and is advanced by operator splitting; the factor c(t, x) solves a
//! Neumann heat equation with consumption. See [`coupling`] for the coupled
//! march and Picard iteration, and [`io::run`] for the configured driver.

pub mod coupling;
pub mod diagnostics;
pub mod diffusion;
pub mod error;
pub mod fields;
pub mod grid;
pub mod io;
mod json_float;
pub mod kinetic;
pub mod params;

pub use error::{Error, Result};
pub use grid::{build_annulus_grid, build_velocity_grid, AnnulusGrid, PhaseGrid, Side, VelocityGrid};
pub use params::ModelParams;
