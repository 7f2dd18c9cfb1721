//! Space-time modeling of multisite wind speed with a scalar latent
//! autoregressive factor: simulation, preprocessing, two-stage estimation
//! (moment matching then EM maximum likelihood), Kalman forecasting,
//! reduced parametric variants, and an evaluation harness.

pub mod cov;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod grid;
pub mod io;
pub mod kalman;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod parametric;
pub mod preprocess;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Result, WindError};
pub use grid::{Site, SiteGrid};
pub use model::{LatentSpec, LoadingSpec, ModelParams, NoiseSpec, Panel, Stage};
