//! Minimum-action force-law identification.
//!
//! Generates noisy planar orbits, selects a radial force law from a basis
//! library by gradient descent on a combined trajectory / sparsity /
//! energy-conservation objective, and validates the selection with
//! calibration, Kepler-exponent fits and Hamiltonian-conservation checks.
//! A sequentially thresholded least-squares baseline is included.

pub mod actionloss;
pub mod diffengine;
pub mod error;
pub mod forcebasis;
pub mod metrics;
pub mod orbitgen;
pub mod presets;
pub mod sindy;
pub mod stencil;
pub mod trainer;
pub mod vec2;

pub use error::{Error, Result};
pub use vec2::Vec2;
