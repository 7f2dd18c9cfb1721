//! Shared fixtures for the in-crate test suites.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::grid::SiteGrid;
use crate::model::{LatentSpec, LoadingSpec, ModelParams, NoiseSpec};

/// Three-site AR(1) model with a fixed, well-conditioned loading and
/// identity noise.
pub(crate) fn small_params(rho: f64, sigma: f64) -> ModelParams {
    let grid = SiteGrid::demo(1, 3);
    let lambda = DMatrix::from_row_slice(3, 3, &[0.9, 0.5, 0.1, 0.4, 0.8, 0.4, 0.1, 0.5, 0.9]);
    ModelParams {
        latent: LatentSpec::Ar1 { rho, sigma },
        loading: LoadingSpec::Full(lambda),
        noise: NoiseSpec::Full(DMatrix::identity(3, 3)),
        grid,
    }
}

/// Random valid model on a single latitude line of `n_lon` sites.
pub(crate) fn random_params(rng: &mut ChaCha8Rng, n_lon: usize, order2: bool) -> ModelParams {
    let grid = SiteGrid::demo(1, n_lon);
    let k = grid.len();
    let lambda = DMatrix::from_fn(k, 3, |_, _| rng.gen_range(-1.0..1.0));
    let m = DMatrix::from_fn(k, k, |_, _| rng.gen_range(-0.5..0.5));
    let gamma = &m * m.transpose() + DMatrix::identity(k, k) * 0.4;
    let latent = if order2 {
        // Draw from the stationarity triangle via partial autocorrelations.
        let phi1: f64 = rng.gen_range(-0.85..0.85);
        let phi2: f64 = rng.gen_range(-0.85..0.85);
        LatentSpec::Ar2 { rho1: phi1 * (1.0 - phi2), rho2: phi2, sigma: rng.gen_range(0.4..1.4) }
    } else {
        LatentSpec::Ar1 { rho: rng.gen_range(-0.9..0.9), sigma: rng.gen_range(0.4..1.4) }
    };
    ModelParams { latent, loading: LoadingSpec::Full(lambda), noise: NoiseSpec::Full(gamma), grid }
}

/// Paper-flavored truth at a small site count: eastward-propagating loading
/// (leading weights in the west, lagged in the east), kernel-generated SPD
/// noise, normalized and sign-canonical.
pub(crate) fn propagating_truth(n_lon: usize, rho: f64) -> ModelParams {
    let grid = SiteGrid::demo(1, n_lon);
    let k = grid.len();
    let mut lambda = DMatrix::zeros(k, 3);
    for i in 0..k {
        let west = (k - 1 - i) as f64 / (k - 1).max(1) as f64;
        lambda[(i, 0)] = 0.4 + 0.8 * west;
        lambda[(i, 1)] = 1.0;
        lambda[(i, 2)] = 0.4 + 0.8 * (1.0 - west);
    }
    let mut gamma = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let d = (i as f64 - j as f64).abs();
            gamma[(i, j)] = 0.5 * (-0.4 * d * d).exp() + if i == j { 0.1 } else { 0.0 };
        }
    }
    ModelParams {
        latent: LatentSpec::Ar1 { rho, sigma: 1.0 },
        loading: LoadingSpec::Full(lambda),
        noise: NoiseSpec::Full(gamma),
        grid,
    }
    .normalize()
    .expect("stationary by construction")
    .canonical_sign()
}
