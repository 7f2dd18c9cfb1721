//! State-space assembly and the exact filter, smoother, likelihood, and
//! h-step forecast for the augmented latent chain.
//!
//! The augmented state at observation time t is
//! `Z_t = (X_{t+1}, X_t, X_{t-1})`, which makes the observation equation
//! contemporaneous (`Y_t = Lambda Z_t + noise`) and lets the first
//! observation be conditioned on the exact stationary law, so no boundary
//! samples are dropped.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, WindError};
use crate::linalg::{self, CompensatedSum};
use crate::model::{LatentSpec, ModelParams};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Augmented-state system matrices plus the stationary initial law.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceForm {
    /// m x m transition (m = 3).
    pub transition: DMatrix<f64>,
    /// m x m state-noise covariance (rank one).
    pub state_noise: DMatrix<f64>,
    /// K x m observation map (the loading).
    pub obs_map: DMatrix<f64>,
    /// K x K observation-noise covariance.
    pub obs_noise: DMatrix<f64>,
    pub init_mean: DVector<f64>,
    /// Stationary covariance of the augmented state; solves the discrete
    /// Lyapunov equation of (transition, state_noise).
    pub init_cov: DMatrix<f64>,
}

impl StateSpaceForm {
    pub fn state_dim(&self) -> usize {
        self.transition.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_map.nrows()
    }
}

/// Assemble the augmented-state form for either latent order.
pub fn build_state_space(params: &ModelParams) -> Result<StateSpaceForm> {
    params.check_usable()?;
    let sigma = params.latent.sigma();
    let transition = match params.latent {
        LatentSpec::Ar1 { rho, .. } => {
            DMatrix::from_row_slice(3, 3, &[rho, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
        }
        LatentSpec::Ar2 { rho1, rho2, .. } => {
            DMatrix::from_row_slice(3, 3, &[rho1, rho2, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
        }
    };
    let mut state_noise = DMatrix::zeros(3, 3);
    state_noise[(0, 0)] = sigma * sigma;
    let init_cov = linalg::solve_discrete_lyapunov(&transition, &state_noise, 1e-14)?;
    Ok(StateSpaceForm {
        transition,
        state_noise,
        obs_map: params.realize_loading()?,
        obs_noise: params.realize_noise()?,
        init_mean: DVector::zeros(3),
        init_cov,
    })
}

/// Output of a filtering pass over one series.
#[derive(Debug, Clone)]
pub struct FilterResult {
    /// One-step predicted state mean/covariance at each time (before the
    /// update with that time's observation).
    pub predicted_mean: Vec<DVector<f64>>,
    pub predicted_cov: Vec<DMatrix<f64>>,
    pub filtered_mean: Vec<DVector<f64>>,
    pub filtered_cov: Vec<DMatrix<f64>>,
    pub innovations: Vec<DVector<f64>>,
    pub innovation_cov: Vec<DMatrix<f64>>,
    pub log_likelihood: f64,
}

fn cholesky_with_jitter(s: &DMatrix<f64>, t: usize) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = nalgebra::Cholesky::new(s.clone()) {
        return Ok(c);
    }
    // One retry with a trace-scaled jitter; persistent failure is surfaced
    // rather than papered over, since it flags an ill-conditioned Gamma.
    let jitter = 1e-10 * s.trace().abs().max(1e-300) / s.nrows() as f64;
    log::warn!("innovation covariance at time {t} is not PD; retrying with jitter {jitter:.3e}");
    let bumped = s + DMatrix::identity(s.nrows(), s.ncols()) * jitter;
    nalgebra::Cholesky::new(bumped).ok_or_else(|| {
        WindError::numerical(format!("innovation covariance is singular at time index {t}"))
    })
}

/// Standard predict/update recursions with Joseph-form covariance updates
/// and post-hoc symmetrization; the log-likelihood accumulates the innovation
/// Gaussian densities in compensated arithmetic.
pub fn filter(ssm: &StateSpaceForm, series: &DMatrix<f64>) -> Result<FilterResult> {
    let t_len = series.nrows();
    let k = ssm.obs_dim();
    if series.ncols() != k {
        return Err(WindError::invalid_data(format!(
            "series has {} columns, state space expects {k}",
            series.ncols()
        )));
    }
    if !series.iter().all(|v| v.is_finite()) {
        return Err(WindError::invalid_data("series contains non-finite values"));
    }

    let m = ssm.state_dim();
    let h = &ssm.obs_map;
    let a = &ssm.transition;
    let identity = DMatrix::<f64>::identity(m, m);

    let mut out = FilterResult {
        predicted_mean: Vec::with_capacity(t_len),
        predicted_cov: Vec::with_capacity(t_len),
        filtered_mean: Vec::with_capacity(t_len),
        filtered_cov: Vec::with_capacity(t_len),
        innovations: Vec::with_capacity(t_len),
        innovation_cov: Vec::with_capacity(t_len),
        log_likelihood: 0.0,
    };
    let mut loglik = CompensatedSum::new();

    let mut x_pred = ssm.init_mean.clone();
    let mut p_pred = ssm.init_cov.clone();

    for t in 0..t_len {
        let y_t = series.row(t).transpose();
        let mut s = h * &p_pred * h.transpose() + &ssm.obs_noise;
        linalg::symmetrize(&mut s);
        let chol = cholesky_with_jitter(&s, t)?;

        let innovation = &y_t - h * &x_pred;
        let solved = chol.solve(&innovation);
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        loglik.add(-0.5 * (k as f64 * LN_2PI + logdet + innovation.dot(&solved)));

        // Gain = P H^T S^{-1}, via the Cholesky solve on the right.
        let gain = chol.solve(&(h * &p_pred)).transpose();
        let x_filt = &x_pred + &gain * &innovation;
        let i_kh = &identity - &gain * h;
        let mut p_filt = &i_kh * &p_pred * i_kh.transpose() + &gain * &ssm.obs_noise * gain.transpose();
        linalg::symmetrize(&mut p_filt);

        out.predicted_mean.push(x_pred.clone());
        out.predicted_cov.push(p_pred.clone());
        out.innovations.push(innovation);
        out.innovation_cov.push(s);
        out.filtered_mean.push(x_filt.clone());
        out.filtered_cov.push(p_filt.clone());

        x_pred = a * &x_filt;
        p_pred = a * &p_filt * a.transpose() + &ssm.state_noise;
        linalg::symmetrize(&mut p_pred);
    }

    out.log_likelihood = loglik.value();
    Ok(out)
}

/// Fixed-interval smoother output.
#[derive(Debug, Clone)]
pub struct SmootherResult {
    pub smoothed_mean: Vec<DVector<f64>>,
    pub smoothed_cov: Vec<DMatrix<f64>>,
    /// `lag_one_cov[i] = cov(Z_{i+1}, Z_i | Y_{1:T})` for i in 0..T-1.
    pub lag_one_cov: Vec<DMatrix<f64>>,
    pub log_likelihood: f64,
}

/// Rauch-Tung-Striebel smoother plus the lag-one cross-covariance recursion
/// needed by the EM sufficient statistics.
pub fn smooth(ssm: &StateSpaceForm, series: &DMatrix<f64>) -> Result<SmootherResult> {
    let filt = filter(ssm, series)?;
    let t_len = series.nrows();
    let a = &ssm.transition;
    let h = &ssm.obs_map;
    let m = ssm.state_dim();

    let mut smoothed_mean = filt.filtered_mean.clone();
    let mut smoothed_cov = filt.filtered_cov.clone();

    // Smoother gains J_t = P_{t|t} A^T P_{t+1|t}^{-1}.
    let mut gains: Vec<DMatrix<f64>> = vec![DMatrix::zeros(m, m); t_len];
    for t in (0..t_len - 1).rev() {
        let chol = nalgebra::Cholesky::new(filt.predicted_cov[t + 1].clone()).ok_or_else(|| {
            WindError::numerical(format!("predicted covariance is singular at time index {}", t + 1))
        })?;
        // J^T = P_pred^{-1} A P_filt.
        let j_t = chol.solve(&(a * &filt.filtered_cov[t])).transpose();
        let mean = &filt.filtered_mean[t] + &j_t * (&smoothed_mean[t + 1] - &filt.predicted_mean[t + 1]);
        let mut cov = &filt.filtered_cov[t]
            + &j_t * (&smoothed_cov[t + 1] - &filt.predicted_cov[t + 1]) * j_t.transpose();
        linalg::symmetrize(&mut cov);
        smoothed_mean[t] = mean;
        smoothed_cov[t] = cov;
        gains[t] = j_t;
    }

    // Lag-one covariance smoother (initialized from the terminal gain).
    let mut lag_one_cov = vec![DMatrix::zeros(m, m); t_len.saturating_sub(1)];
    if t_len >= 2 {
        let t_last = t_len - 1;
        let chol = nalgebra::Cholesky::new(filt.innovation_cov[t_last].clone())
            .ok_or_else(|| WindError::numerical("terminal innovation covariance is singular"))?;
        let gain = chol.solve(&(h * &filt.predicted_cov[t_last])).transpose();
        let i_kh = DMatrix::<f64>::identity(m, m) - &gain * h;
        lag_one_cov[t_last - 1] = &i_kh * a * &filt.filtered_cov[t_last - 1];
        for t in (1..t_last).rev() {
            lag_one_cov[t - 1] = &filt.filtered_cov[t] * gains[t - 1].transpose()
                + &gains[t]
                    * (&lag_one_cov[t] - a * &filt.filtered_cov[t])
                    * gains[t - 1].transpose();
        }
    }

    Ok(SmootherResult {
        smoothed_mean,
        smoothed_cov,
        lag_one_cov,
        log_likelihood: filt.log_likelihood,
    })
}

/// Filter the series, then propagate the terminal state h steps ahead.
/// Returns the forecast mean and covariance of the observation at horizons
/// `1..=h`.
pub fn forecast(
    ssm: &StateSpaceForm,
    series: &DMatrix<f64>,
    horizon: usize,
) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
    if horizon == 0 {
        return Err(WindError::invalid_data("forecast horizon must be at least 1"));
    }
    let filt = filter(ssm, series)?;
    let t_last = series.nrows() - 1;
    let a = &ssm.transition;
    let h_map = &ssm.obs_map;

    let mut state_mean = filt.filtered_mean[t_last].clone();
    let mut state_cov = filt.filtered_cov[t_last].clone();
    let mut out = Vec::with_capacity(horizon);
    for _ in 1..=horizon {
        state_mean = a * &state_mean;
        state_cov = a * &state_cov * a.transpose() + &ssm.state_noise;
        linalg::symmetrize(&mut state_cov);
        let mut y_cov = h_map * &state_cov * h_map.transpose() + &ssm.obs_noise;
        linalg::symmetrize(&mut y_cov);
        out.push((h_map * &state_mean, y_cov));
    }
    Ok(out)
}

/// One-step-ahead observation predictions for every time in the series
/// (the prediction at time 0 is the stationary mean). Used by the forecast
/// evaluation harness.
pub fn one_step_predictions(ssm: &StateSpaceForm, series: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let filt = filter(ssm, series)?;
    let t_len = series.nrows();
    let k = ssm.obs_dim();
    let mut preds = DMatrix::zeros(t_len, k);
    for t in 0..t_len {
        let y_hat = &ssm.obs_map * &filt.predicted_mean[t];
        for i in 0..k {
            preds[(t, i)] = y_hat[i];
        }
    }
    Ok(preds)
}

/// Direct joint-Gaussian log-density of a stacked series under the model's
/// theoretical covariance. O((TK)^3); the brute-force oracle for the filter.
pub fn joint_gaussian_loglik(params: &ModelParams, series: &DMatrix<f64>) -> Result<f64> {
    let t_len = series.nrows();
    let k = series.ncols();
    let covs = crate::cov::theoretical_cov_ss(params, t_len.saturating_sub(1))?;
    let n = t_len * k;
    let mut sigma = DMatrix::zeros(n, n);
    for t in 0..t_len {
        for s in t..t_len {
            let block = covs.lag(s - t);
            for i in 0..k {
                for j in 0..k {
                    sigma[(t * k + i, s * k + j)] = block[(i, j)];
                    sigma[(s * k + j, t * k + i)] = block[(i, j)];
                }
            }
        }
    }
    let mut y = DVector::zeros(n);
    for t in 0..t_len {
        for i in 0..k {
            y[t * k + i] = series[(t, i)];
        }
    }
    let chol = nalgebra::Cholesky::new(sigma)
        .ok_or_else(|| WindError::numerical("joint covariance is not positive definite"))?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let solved = chol.solve(&y);
    Ok(-0.5 * (n as f64 * LN_2PI + logdet + y.dot(&solved)))
}
