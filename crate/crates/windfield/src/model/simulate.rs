//! Exact simulation from the stationary model.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Result, WindError};
use crate::model::{LatentSpec, ModelParams, Panel, Stage};

/// Draw `r_reps` independent replicates of length `t_len` from the model.
///
/// The latent chain starts from its exact stationary law, so no burn-in is
/// needed and the output is a draw from the stationary process. Each
/// replicate consumes its own counter-based RNG stream derived from
/// `(seed, replicate index)`; results are bit-reproducible and independent
/// of scheduling order.
pub fn simulate(params: &ModelParams, t_len: usize, r_reps: usize, seed: u64) -> Result<Panel> {
    params.check_usable()?;
    if t_len < 4 {
        return Err(WindError::invalid_data("simulation length must be at least 4"));
    }
    if r_reps == 0 {
        return Err(WindError::invalid_data("at least one replicate required"));
    }

    let lambda = params.realize_loading()?;
    let gamma = params.realize_noise()?;
    let noise_chol = nalgebra::Cholesky::new(crate::linalg::sym(&gamma))
        .ok_or_else(|| WindError::numerical("noise covariance has no Cholesky factor"))?;
    let noise_l = noise_chol.l();
    let k = params.k();

    let values: Vec<DMatrix<f64>> = (0..r_reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64 + 1);
            simulate_replicate(&params.latent, &lambda, &noise_l, k, t_len, &mut rng)
        })
        .collect();

    let mut panel = Panel::new(values, params.grid.clone(), Stage::TransformedCentered)?;
    panel.time_step_hours = Panel::DEFAULT_TIME_STEP_HOURS;
    Ok(panel)
}

fn simulate_replicate(
    latent: &LatentSpec,
    lambda: &DMatrix<f64>,
    noise_l: &DMatrix<f64>,
    k: usize,
    t_len: usize,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    // Observation times are 1..=T; the loading touches X_{t-1}..X_{t+1},
    // so the path spans indices 0..=T+1.
    let path = simulate_latent_path(latent, t_len + 2, rng);

    let mut y = DMatrix::zeros(t_len, k);
    let mut eta = DVector::zeros(k);
    for t in 1..=t_len {
        for v in eta.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let noise = noise_l * &eta;
        for i in 0..k {
            y[(t - 1, i)] = lambda[(i, 0)] * path[t + 1]
                + lambda[(i, 1)] * path[t]
                + lambda[(i, 2)] * path[t - 1]
                + noise[i];
        }
    }
    y
}

/// Stationary draw of `len` consecutive latent values.
fn simulate_latent_path(latent: &LatentSpec, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = vec![0.0; len];
    match *latent {
        LatentSpec::Ar1 { rho, sigma } => {
            let sd0 = (sigma * sigma / (1.0 - rho * rho)).sqrt();
            x[0] = sd0 * rng.sample::<f64, _>(StandardNormal);
            for t in 1..len {
                x[t] = rho * x[t - 1] + sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        LatentSpec::Ar2 { rho1, rho2, sigma } => {
            // Exact stationary law of a consecutive pair (X_0, X_1):
            // variance s, correlation r1 = rho1 / (1 - rho2).
            let s = sigma * sigma * (1.0 - rho2)
                / ((1.0 + rho2) * ((1.0 - rho2) * (1.0 - rho2) - rho1 * rho1));
            let r1 = rho1 / (1.0 - rho2);
            let z0: f64 = rng.sample(StandardNormal);
            let z1: f64 = rng.sample(StandardNormal);
            x[0] = s.sqrt() * z0;
            x[1] = s.sqrt() * (r1 * z0 + (1.0 - r1 * r1).max(0.0).sqrt() * z1);
            for t in 2..len {
                x[t] = rho1 * x[t - 1] + rho2 * x[t - 2] + sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    x
}
