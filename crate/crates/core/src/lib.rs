//! Bayesian smoothing and mean–covariance estimation for functional data.
//!
//! Curves are observed with noise on possibly different grids. The model is
//! a Gaussian process with an inverse-Wishart process prior on the
//! covariance, reduced to the coefficients of a cubic B-spline basis
//! anchored on a low-dimensional working grid, and fitted by Gibbs sampling.

pub mod baseline;
pub mod basis;
pub mod bspline;
pub mod covariance;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod simulation;
pub mod special;

pub use basis::{build_basis, select_working_grid, BasisSpec, BasisSystem, WorkingGrid};
pub use covariance::{CovMatrix, MaternParams};
pub use error::{Error, Result};
pub use model::{Curve, FunctionalDataset, HyperParams, InducedPrior, McmcState, PriorOverrides};
pub use sampler::{McmcConfig, PosteriorDraws, PosteriorSummary};
pub use pipeline::{fit, FitConfig, FitOutput, FitReport};
pub use simulation::{SimDesign, SimulatedData};
