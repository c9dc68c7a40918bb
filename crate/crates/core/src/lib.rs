//! Compressive EBSD acquisition simulation and map reconstruction.
//!
//! The crate models the full simulated pipeline: a Voronoi grain phantom
//! ([`phantom`]) provides reference band-contrast and orientation (IPF) maps;
//! a toy sensing operator ([`pattern`]) renders one diffraction pattern per
//! probed position, optionally corrupted by SNR-targeted Gaussian or Poisson
//! noise ([`noise`]); a Hough-based indexer ([`indexing`]) recovers each
//! pattern's orientation and band contrast; probe subsampling ([`sampling`])
//! leaves incomplete maps, which Beta-process factor-analysis dictionary
//! learning ([`bpfa`]) inpaints; [`metrics`] scores the results.
//!
//! All numeric types are generic over [`Real`] (`f32` or `f64`); both
//! instantiations consume identical RNG streams.

pub mod bpfa;
pub mod error;
pub mod hough;
pub mod indexing;
pub mod map;
pub mod metrics;
pub mod noise;
pub mod pattern;
pub mod phantom;
pub mod real;
pub mod sampling;

pub use error::{Error, Result};
pub use real::Real;

pub type ScalarMap32 = map::ScalarMap<f32>;
pub type ScalarMap64 = map::ScalarMap<f64>;
pub type RgbMap32 = map::RgbMap<f32>;
pub type RgbMap64 = map::RgbMap<f64>;
pub type Pattern32 = pattern::Pattern<f32>;
pub type Pattern64 = pattern::Pattern<f64>;
