//! Two-stage parameter estimation.
//!
//! Stage one matches the first four lagged covariance matrices (moment
//! matching, "GMM"): a three-step initializer exploits the structure of the
//! lag equations, then a simplex search minimizes the four-lag objective
//! with the noise covariance profiled onto the PSD cone in closed form.
//!
//! Stage two is maximum likelihood by EM (analytic updates for the fully
//! parametrized model) or generalized EM (block ascent for the reduced
//! loading/noise structures), initialized at the stage-one estimate.

mod em;

pub use em::{em_step, gem_step, EmStep, DEFAULT_GEM_BUDGET};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cov::{self, CovSet};
use crate::error::{Result, WindError};
use crate::grid::SiteGrid;
use crate::kalman;
use crate::linalg::{self, CompensatedSum};
use crate::model::{LatentSpec, LoadingSpec, ModelParams, NoiseSpec, Panel, Stage};
use crate::optim::{self, NelderMeadOptions};
use crate::parametric::{self, KernelKind, NoiseKernelParams, PolyLoading};

/// Which reduced or full structure a fit estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    /// Free loading, free noise covariance, AR(1) latent.
    Full,
    /// Free loading and noise, AR(2) latent.
    Ar2,
    /// Longitude-polynomial loading, free noise, AR(1) latent.
    PolyLoading,
    /// Free loading, Gaussian-kernel noise, AR(1) latent.
    GaussNoise,
    /// Free loading, wave-kernel noise, AR(1) latent.
    WaveNoise,
}

impl std::fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ModelVariant::Full => "M",
            ModelVariant::Ar2 => "M2",
            ModelVariant::PolyLoading => "M-lambda",
            ModelVariant::GaussNoise => "M-gamma-gauss",
            ModelVariant::WaveNoise => "M-gamma-wave",
        };
        write!(f, "{name}")
    }
}

impl ModelVariant {
    pub fn parse(s: &str) -> Result<ModelVariant> {
        Ok(match s {
            "M" | "m" | "full" => ModelVariant::Full,
            "M2" | "m2" | "ar2" => ModelVariant::Ar2,
            "M-lambda" | "m-lambda" | "poly" => ModelVariant::PolyLoading,
            "M-gamma-gauss" | "m-gamma-gauss" | "gauss" => ModelVariant::GaussNoise,
            "M-gamma-wave" | "m-gamma-wave" | "wave" => ModelVariant::WaveNoise,
            other => {
                return Err(WindError::invalid_params(format!(
                    "unknown model variant '{other}' (expected M, M2, M-lambda, M-gamma-gauss, M-gamma-wave)"
                )))
            }
        })
    }

    /// Free-parameter count of the identified model at K sites (the latent
    /// scale is pinned by the unit-variance constraint).
    pub fn naive_parameter_count(&self, k: usize) -> usize {
        let loading = match self {
            ModelVariant::PolyLoading => 15,
            _ => 3 * k,
        };
        let noise = match self {
            ModelVariant::GaussNoise | ModelVariant::WaveNoise => k + 4,
            _ => k * (k + 1) / 2,
        };
        let latent = match self {
            ModelVariant::Ar2 => 2,
            _ => 1,
        };
        loading + noise + latent
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Gmm,
    Ml,
}

/// Knobs of a fit run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub variant: ModelVariant,
    pub method: FitMethod,
    /// EM iteration cap.
    pub max_iterations: usize,
    /// Relative log-likelihood (or objective) change below which the outer
    /// loop stops.
    pub rel_tolerance: f64,
    /// Total simplex evaluation budget of each numerical search.
    pub inner_budget: usize,
    /// Random restarts of the simplex searches.
    pub restarts: usize,
    pub seed: u64,
}

impl FitOptions {
    pub fn new(variant: ModelVariant, method: FitMethod) -> FitOptions {
        FitOptions {
            variant,
            method,
            max_iterations: 500,
            rel_tolerance: 1e-8,
            inner_budget: 60_000,
            restarts: 3,
            seed: 0,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.rel_tolerance > 0.0) {
            return Err(WindError::invalid_params("relative tolerance must be positive"));
        }
        if self.max_iterations == 0 || self.inner_budget == 0 {
            return Err(WindError::invalid_params("iteration budgets must be positive"));
        }
        Ok(())
    }
}

/// Result of a fit: estimated parameters plus audit trail.
#[derive(Debug, Clone)]
pub struct FitReport {
    /// Normalized, sign-canonical estimate.
    pub params: ModelParams,
    pub method: FitMethod,
    pub variant: ModelVariant,
    /// GMM: objective values along the search (non-increasing).
    /// ML: log-likelihood per EM iteration (non-decreasing).
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// GEM stall marker: no block found an improving step.
    pub stalled: bool,
    /// Stage-one estimate retained for audit (ML fits).
    pub initializer: Option<Box<ModelParams>>,
}

// ---------------------------------------------------------------------------
// Three-step initializer.
// ---------------------------------------------------------------------------

/// Initialize the AR coefficient as the mean of elementwise ratios of the
/// lag-3 to lag-2 covariances, skipping entries with near-zero denominator.
pub fn init_rho(cov: &CovSet) -> Result<f64> {
    if cov.max_lag() < 3 {
        return Err(WindError::invalid_data("initializer needs lags up to 3"));
    }
    let c2 = cov.lag(2);
    let c3 = cov.lag(3);
    let c2max = c2.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut sum = 0.0;
    let mut count = 0usize;
    for (den, num) in c2.iter().zip(c3.iter()) {
        if den.abs() >= 1e-6 * c2max {
            sum += num / den;
            count += 1;
        }
    }
    if count == 0 {
        return Err(WindError::estimation(
            "all lag-2 covariance entries are negligible; the ratio initializer is undefined",
        ));
    }
    Ok((sum / count as f64).clamp(-0.999, 0.999))
}

/// Least-squares AR(2) coefficients from the lag recursion
/// `C_3 = rho1 C_2 + rho2 C_1`, projected into the stationarity triangle.
fn init_rho_ar2(cov: &CovSet) -> Result<(f64, f64)> {
    if cov.max_lag() < 3 {
        return Err(WindError::invalid_data("initializer needs lags up to 3"));
    }
    let (c1, c2, c3) = (cov.lag(1), cov.lag(2), cov.lag(3));
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((x2, x1), x3) in c2.iter().zip(c1.iter()).zip(c3.iter()) {
        a11 += x2 * x2;
        a12 += x2 * x1;
        a22 += x1 * x1;
        b1 += x2 * x3;
        b2 += x1 * x3;
    }
    let det = a11 * a22 - a12 * a12;
    if det.abs() <= 1e-12 * a11.abs().max(1.0) {
        return Err(WindError::estimation("lag regression for the AR(2) initializer is singular"));
    }
    let rho1 = (b1 * a22 - b2 * a12) / det;
    let rho2 = (b2 * a11 - b1 * a12) / det;
    // Clamp through the partial-autocorrelation parametrization.
    let phi2 = rho2.clamp(-0.95, 0.95);
    let phi1 = (rho1 / (1.0 - phi2)).clamp(-0.95, 0.95);
    Ok((phi1 * (1.0 - phi2), phi2))
}

fn unit_latent(variant: ModelVariant, rho: f64, rho2: f64) -> LatentSpec {
    match variant {
        ModelVariant::Ar2 => {
            let sigma2 = (1.0 + rho2) * ((1.0 - rho2) * (1.0 - rho2) - rho * rho) / (1.0 - rho2);
            LatentSpec::Ar2 { rho1: rho, rho2, sigma: sigma2.max(1e-12).sqrt() }
        }
        _ => LatentSpec::Ar1 { rho, sigma: (1.0 - rho * rho).max(1e-12).sqrt() },
    }
}

/// Latent-signal lags at unit stationary variance for either latent order.
fn latent_lags(latent: &LatentSpec, lambda: &DMatrix<f64>, max_lag: usize) -> Result<Vec<DMatrix<f64>>> {
    match *latent {
        LatentSpec::Ar1 { rho, .. } => Ok(cov::ar1_latent_lags(rho, 1.0, lambda, max_lag)),
        LatentSpec::Ar2 { rho1, rho2, sigma } => cov::ar2_latent_lags(rho1, rho2, sigma, lambda, max_lag),
    }
}

/// Loading initializer: minimize the lag-1 + lag-2 Frobenius objective at
/// fixed latent coefficients under the unit-variance constraint. Nelder-Mead
/// from algebraic rank-one starts, with seeded random restarts; the
/// objective does not involve the noise covariance.
pub fn init_lambda(cov: &CovSet, latent: &LatentSpec, seed: u64, budget: usize, restarts: usize) -> Result<DMatrix<f64>> {
    if cov.max_lag() < 2 {
        return Err(WindError::invalid_data("loading initializer needs lags up to 2"));
    }
    let k = cov.k();
    let c1_hat = cov.lag(1).clone();
    let c2_hat = cov.lag(2).clone();
    let latent = latent.clone();

    let objective = |z: &DVector<f64>| -> f64 {
        let lambda = DMatrix::from_column_slice(k, 3, z.as_slice());
        match latent_lags(&latent, &lambda, 2) {
            Ok(lags) => {
                linalg::frobenius_dist(&c1_hat, &lags[1]).powi(2)
                    + linalg::frobenius_dist(&c2_hat, &lags[2]).powi(2)
            }
            Err(_) => f64::INFINITY,
        }
    };

    // Algebraic starting points from the rank-one structure of the lag-2
    // covariance and of C_2 - rho C_1.
    let rho_eff = latent.lag1_autocorrelation();
    let mut starts: Vec<DVector<f64>> = Vec::new();
    let d = &c2_hat - &c1_hat * rho_eff;
    let svd_d = d.clone().svd(true, true);
    let svd_c2 = c2_hat.clone().svd(true, true);
    if let (Some(ud), Some(vd), Some(uc), _) =
        (svd_d.u.as_ref(), svd_d.v_t.as_ref(), svd_c2.u.as_ref(), svd_c2.v_t.as_ref())
    {
        let denom = (1.0 - rho_eff * rho_eff).max(1e-3);
        let scale_d = (svd_d.singular_values[0] / denom).max(1e-12).sqrt();
        let scale_u = svd_c2.singular_values[0].max(1e-12).sqrt();
        for s1 in [1.0, -1.0] {
            for s2 in [1.0, -1.0] {
                let a1 = ud.column(0) * (s1 * scale_d);
                let am1 = vd.row(0).transpose() * (s1 * scale_d);
                let u_vec = uc.column(0) * (s2 * scale_u);
                let a0 = if rho_eff.abs() > 0.05 {
                    (&u_vec - &a1 - &am1 * (rho_eff * rho_eff)) / rho_eff
                } else {
                    // At small rho solve the linear least-squares for the
                    // center column from the lag-1 equation.
                    let lhs = DMatrix::identity(k, k) * (a1.norm_squared() + am1.norm_squared())
                        + &a1 * am1.transpose()
                        + &am1 * a1.transpose();
                    let rhs = c1_hat.transpose() * &a1 + &c1_hat * &am1;
                    match nalgebra::Cholesky::new(lhs) {
                        Some(ch) => ch.solve(&rhs),
                        None => DVector::zeros(k),
                    }
                };
                let mut z = DVector::zeros(3 * k);
                for i in 0..k {
                    z[i] = a1[i];
                    z[k + i] = a0[i];
                    z[2 * k + i] = am1[i];
                }
                starts.push(z);
            }
        }
    }
    starts.push(DVector::zeros(3 * k));

    let mut best: Option<optim::MinimizeResult> = None;
    let opts = NelderMeadOptions {
        max_evaluations: budget / starts.len().max(1),
        f_tol: 1e-14,
        initial_step: 0.1,
    };
    for (i, start) in starts.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let run = optim::nelder_mead_restarts(objective, start, &opts, restarts, 0.15, &mut rng);
        if best.as_ref().map_or(true, |b| run.value < b.value) {
            best = Some(run);
        }
    }
    let best = best.ok_or_else(|| WindError::estimation("loading initializer failed on every start"))?;
    if !best.value.is_finite() {
        return Err(WindError::estimation("loading initializer diverged on every restart"));
    }
    Ok(DMatrix::from_column_slice(k, 3, best.x.as_slice()))
}

/// Noise initializer: the lag-0 moment equation is linear in the noise
/// covariance, so the minimizer is the residual `C_0 - latent part`,
/// projected onto the PSD cone with a small positive floor.
pub fn init_gamma(cov: &CovSet, latent: &LatentSpec, lambda: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let lags = latent_lags(latent, lambda, 0)?;
    let residual = cov.lag(0) - &lags[0];
    Ok(linalg::psd_project(&residual, 1e-8))
}

// ---------------------------------------------------------------------------
// Moment-matching (GMM) fit.
// ---------------------------------------------------------------------------

/// Internal description of the free-parameter layout for a variant.
pub(crate) struct GmmProblem {
    chat: Vec<DMatrix<f64>>,
    variant: ModelVariant,
    grid: SiteGrid,
    k: usize,
}

pub(crate) struct DecodedPoint {
    pub latent: LatentSpec,
    pub loading: LoadingSpec,
    pub lambda: DMatrix<f64>,
    /// Noise covariance: kernel-realized for the noise variants, PSD-profiled
    /// residual otherwise.
    pub gamma: DMatrix<f64>,
    pub noise: NoiseSpec,
}

impl GmmProblem {
    pub(crate) fn new(chat: &CovSet, variant: ModelVariant, grid: &SiteGrid) -> Result<GmmProblem> {
        if chat.max_lag() < 3 {
            return Err(WindError::invalid_data("moment matching needs lags 0..3"));
        }
        Ok(GmmProblem {
            chat: chat.lags().to_vec(),
            variant,
            grid: grid.clone(),
            k: chat.k(),
        })
    }

    fn dim(&self) -> usize {
        let loading = match self.variant {
            ModelVariant::PolyLoading => 15,
            _ => 3 * self.k,
        };
        let latent = if self.variant == ModelVariant::Ar2 { 2 } else { 1 };
        let noise = match self.variant {
            ModelVariant::GaussNoise | ModelVariant::WaveNoise => self.k + 4,
            _ => 0,
        };
        latent + loading + noise
    }

    pub(crate) fn encode(&self, latent: &LatentSpec, loading: &LoadingSpec, noise: &NoiseSpec) -> Result<DVector<f64>> {
        let mut z = DVector::zeros(self.dim());
        let mut idx = 0;
        match (self.variant, latent) {
            (ModelVariant::Ar2, LatentSpec::Ar2 { rho1, rho2, .. }) => {
                let phi2 = rho2.clamp(-0.9995, 0.9995);
                let phi1 = (rho1 / (1.0 - phi2)).clamp(-0.9995, 0.9995);
                z[0] = phi1.atanh();
                z[1] = phi2.atanh();
                idx = 2;
            }
            (_, LatentSpec::Ar1 { rho, .. }) => {
                z[0] = rho.clamp(-0.9995, 0.9995).atanh();
                idx = 1;
            }
            _ => return Err(WindError::invalid_params("latent order does not match the variant")),
        }
        match (self.variant, loading) {
            (ModelVariant::PolyLoading, LoadingSpec::Polynomial(p)) => {
                for col in 0..3 {
                    for lat in 0..3 {
                        z[idx] = p.intercepts[col][lat];
                        idx += 1;
                    }
                    z[idx] = p.linear[col];
                    idx += 1;
                    z[idx] = p.quadratic[col];
                    idx += 1;
                }
            }
            (ModelVariant::PolyLoading, LoadingSpec::Full(_)) => {
                return Err(WindError::invalid_params("polynomial variant requires polynomial loading"))
            }
            (_, spec) => {
                let lambda = spec.realize(&self.grid)?;
                for c in 0..3 {
                    for i in 0..self.k {
                        z[idx] = lambda[(i, c)];
                        idx += 1;
                    }
                }
            }
        }
        if matches!(self.variant, ModelVariant::GaussNoise | ModelVariant::WaveNoise) {
            let kp = match noise {
                NoiseSpec::Parametric { params, .. } => params.clone(),
                NoiseSpec::Full(_) => {
                    return Err(WindError::invalid_params("kernel variant requires kernel noise"))
                }
            };
            for i in 0..self.k {
                z[idx] = kp.sigmas[i].max(1e-12).ln();
                idx += 1;
            }
            z[idx] = kp.range.max(1e-12).ln();
            z[idx + 1] = kp.nugget.max(1e-12).ln();
            z[idx + 2] = kp.aniso.theta2;
            z[idx + 3] = (kp.aniso.theta1 - 0.25 * kp.aniso.theta2 * kp.aniso.theta2).max(1e-12).ln();
        }
        Ok(z)
    }

    pub(crate) fn decode(&self, z: &DVector<f64>) -> Result<DecodedPoint> {
        let mut idx = 0;
        let latent = if self.variant == ModelVariant::Ar2 {
            let phi1 = z[0].tanh() * 0.9995;
            let phi2 = z[1].tanh() * 0.9995;
            idx = 2;
            unit_latent(ModelVariant::Ar2, phi1 * (1.0 - phi2), phi2)
        } else {
            let rho = z[0].tanh() * 0.9995;
            idx = 1;
            unit_latent(self.variant, rho, 0.0)
        };
        let (loading, lambda) = if self.variant == ModelVariant::PolyLoading {
            let mut p = PolyLoading::zeros();
            for col in 0..3 {
                for lat in 0..3 {
                    p.intercepts[col][lat] = z[idx];
                    idx += 1;
                }
                p.linear[col] = z[idx];
                idx += 1;
                p.quadratic[col] = z[idx];
                idx += 1;
            }
            let lambda = parametric::lambda_polynomial(&p, &self.grid)?;
            (LoadingSpec::Polynomial(p), lambda)
        } else {
            let lambda = DMatrix::from_fn(self.k, 3, |i, c| z[idx + c * self.k + i]);
            idx += 3 * self.k;
            (LoadingSpec::Full(lambda.clone()), lambda)
        };

        let lags = latent_lags(&latent, &lambda, 0)?;
        let (gamma, noise) = if matches!(self.variant, ModelVariant::GaussNoise | ModelVariant::WaveNoise) {
            let sigmas: Vec<f64> = (0..self.k).map(|i| z[idx + i].exp()).collect();
            let range = z[idx + self.k].exp();
            let nugget = z[idx + self.k + 1].exp();
            let theta2 = z[idx + self.k + 2];
            let theta1 = z[idx + self.k + 3].exp() + 0.25 * theta2 * theta2;
            let kp = NoiseKernelParams {
                sigmas,
                range,
                nugget,
                aniso: parametric::AnisotropyParams { theta1, theta2 },
            };
            let kind = if self.variant == ModelVariant::GaussNoise { KernelKind::Gauss } else { KernelKind::Wave };
            let gamma = parametric::realize_kernel(kind, &kp, &self.grid)?;
            (gamma, NoiseSpec::Parametric { kind, params: kp })
        } else {
            // Exact profile of the lag-0 equation over the PSD cone.
            let residual = &self.chat[0] - &lags[0];
            let gamma = linalg::psd_project(&residual, 0.0);
            (gamma.clone(), NoiseSpec::Full(gamma))
        };
        Ok(DecodedPoint { latent, loading, lambda, gamma, noise })
    }

    /// The four-lag moment objective at a decoded point.
    pub(crate) fn objective_at(&self, point: &DecodedPoint) -> Result<f64> {
        let lags = latent_lags(&point.latent, &point.lambda, 3)?;
        let mut total = 0.0;
        let c0_model = &lags[0] + &point.gamma;
        total += linalg::frobenius_dist(&self.chat[0], &c0_model).powi(2);
        for k in 1..=3 {
            total += linalg::frobenius_dist(&self.chat[k], &lags[k]).powi(2);
        }
        Ok(total)
    }

    pub(crate) fn objective(&self, z: &DVector<f64>) -> f64 {
        match self.decode(z).and_then(|p| self.objective_at(&p)) {
            Ok(v) => v,
            Err(_) => f64::INFINITY,
        }
    }
}

/// Build the three-step initializer for a variant, as concrete specs.
fn initializer(
    chat: &CovSet,
    variant: ModelVariant,
    grid: &SiteGrid,
    opts: &FitOptions,
) -> Result<(LatentSpec, LoadingSpec, NoiseSpec)> {
    let latent = match variant {
        ModelVariant::Ar2 => {
            let (rho1, rho2) = init_rho_ar2(chat)?;
            unit_latent(ModelVariant::Ar2, rho1, rho2)
        }
        _ => unit_latent(variant, init_rho(chat)?, 0.0),
    };
    let lambda0 = init_lambda(chat, &latent, opts.seed, opts.inner_budget / 2, opts.restarts.min(2))?;
    let gamma0 = init_gamma(chat, &latent, &lambda0)?;

    let loading = match variant {
        ModelVariant::PolyLoading => {
            LoadingSpec::Polynomial(parametric::fit_polynomial_loading(&lambda0, grid)?)
        }
        _ => LoadingSpec::Full(lambda0),
    };
    let noise = match variant {
        ModelVariant::GaussNoise | ModelVariant::WaveNoise => {
            let kind = if variant == ModelVariant::GaussNoise { KernelKind::Gauss } else { KernelKind::Wave };
            let fit = parametric::fit_noise_kernel(&gamma0, grid, kind, opts.seed, opts.inner_budget / 2)?;
            NoiseSpec::Parametric { kind, params: fit.params }
        }
        _ => NoiseSpec::Full(gamma0),
    };
    Ok((latent, loading, noise))
}

/// Moment-matching fit: three-step initializer, then bounded simplex descent
/// on the four-lag objective. Non-convergence is reported in the flags, not
/// as an error.
pub fn gmm_fit(panel: &Panel, opts: &FitOptions) -> Result<FitReport> {
    opts.check()?;
    panel.require_stage(Stage::TransformedCentered)?;
    if panel.t_len() < 5 {
        return Err(WindError::invalid_data("moment matching needs at least 5 time steps"));
    }
    let chat = cov::empirical_cov(panel, 3)?;
    gmm_fit_to_moments(&chat, &panel.grid, opts)
}

/// Fit the model-implied covariances to a given set of empirical (or exact)
/// moments. Exposed for the estimator studies; `gmm_fit` is the panel entry
/// point.
pub fn gmm_fit_to_moments(chat: &CovSet, grid: &SiteGrid, opts: &FitOptions) -> Result<FitReport> {
    let problem = GmmProblem::new(chat, opts.variant, grid)?;
    let (lat0, load0, noise0) = initializer(chat, opts.variant, grid, opts)?;
    let z0 = problem.encode(&lat0, &load0, &noise0)?;
    let init_value = problem.objective(&z0);

    let nm_opts = NelderMeadOptions {
        max_evaluations: opts.inner_budget / (opts.restarts + 1).max(1),
        f_tol: 1e-14,
        initial_step: 0.05,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let run = optim::nelder_mead_restarts(|z| problem.objective(z), &z0, &nm_opts, opts.restarts, 0.1, &mut rng);

    // The returned point is the better of the search result and its own
    // starting point, so the descent property holds by construction.
    let (z_best, best_value) = if run.value <= init_value { (run.x.clone(), run.value) } else { (z0, init_value) };
    let decoded = problem.decode(&z_best)?;
    // Give the profiled noise a strictly positive floor for downstream use.
    let noise = match decoded.noise {
        NoiseSpec::Full(_) => {
            let lags = latent_lags(&decoded.latent, &decoded.lambda, 0)?;
            NoiseSpec::Full(linalg::psd_project(&(chat.lag(0) - &lags[0]), 1e-8))
        }
        other => other,
    };
    let params = ModelParams {
        latent: decoded.latent,
        loading: decoded.loading,
        noise,
        grid: grid.clone(),
    }
    .normalize()?
    .canonical_sign();

    let mut trace = Vec::with_capacity(run.trace.len() + 1);
    trace.push(init_value);
    trace.extend(run.trace.iter().copied().filter(|v| *v <= init_value));

    Ok(FitReport {
        params,
        method: FitMethod::Gmm,
        variant: opts.variant,
        trace,
        converged: run.converged,
        iterations: run.evaluations,
        stalled: false,
        initializer: None,
    })
    .map(|mut rep| {
        rep.trace.push(best_value);
        rep
    })
}

/// Pooled log-likelihood of a panel under the model (replicates summed in
/// fixed order).
pub fn panel_loglik(params: &ModelParams, panel: &Panel) -> Result<f64> {
    let ssm = kalman::build_state_space(params)?;
    let per_rep: Result<Vec<f64>> = panel
        .replicates()
        .par_iter()
        .map(|series| Ok(kalman::filter(&ssm, series)?.log_likelihood))
        .collect();
    let mut total = CompensatedSum::new();
    for ll in per_rep? {
        total.add(ll);
    }
    Ok(total.value())
}

/// Maximum-likelihood fit: moment matching for the initial point, then EM
/// (or generalized EM for reduced structures) until the relative
/// log-likelihood change is below tolerance.
pub fn ml_fit(panel: &Panel, opts: &FitOptions) -> Result<FitReport> {
    opts.check()?;
    let gmm = gmm_fit(panel, opts)?;
    let initializer = gmm.params.clone();

    let mut params = gmm.params;
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut stalled = false;
    let mut iterations = 0usize;
    for _ in 0..opts.max_iterations {
        let out = em::shared_step(&params, panel, opts.inner_budget.min(DEFAULT_GEM_BUDGET))?;
        iterations += 1;
        trace.push(out.log_likelihood);
        let n = trace.len();
        if n >= 2 {
            let delta = trace[n - 1] - trace[n - 2];
            if delta.abs() <= opts.rel_tolerance * trace[n - 2].abs().max(1.0) {
                params = out.params;
                converged = true;
                break;
            }
        }
        params = out.params;
        if out.stalled {
            stalled = true;
            converged = true;
            break;
        }
    }
    trace.push(panel_loglik(&params, panel)?);

    Ok(FitReport {
        params,
        method: FitMethod::Ml,
        variant: opts.variant,
        trace,
        converged,
        iterations,
        stalled,
        initializer: Some(Box::new(initializer)),
    })
}

/// Dispatch on the configured method.
pub fn fit(panel: &Panel, opts: &FitOptions) -> Result<FitReport> {
    match opts.method {
        FitMethod::Gmm => gmm_fit(panel, opts),
        FitMethod::Ml => ml_fit(panel, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::simulate;
    use crate::testutil;
    use approx::assert_abs_diff_eq;

    fn theoretical_moments(params: &ModelParams) -> CovSet {
        cov::theoretical_cov_closed(params, 3).unwrap()
    }

    #[test]
    fn init_rho_exact_on_theoretical_moments() {
        let p = testutil::propagating_truth(4, 0.76);
        let cs = theoretical_moments(&p);
        assert_abs_diff_eq!(init_rho(&cs).unwrap(), 0.76, epsilon = 1e-12);

        let p0 = testutil::propagating_truth(4, 0.0);
        // rho = 0: the lag-3 covariance vanishes, ratios are 0/0; entries are
        // excluded and the initializer errors, or all ratios are zero.
        let cs0 = cov::theoretical_cov_closed(&p0, 3).unwrap();
        match init_rho(&cs0) {
            Ok(r) => assert!(r.abs() < 1e-10),
            Err(_) => {} // fully excluded is acceptable for exact zeros
        }
    }

    #[test]
    fn init_rho_small_rho_nonzero_lag2() {
        // rho small but nonzero keeps C_2 nonzero: ratio recovers rho.
        let p = testutil::propagating_truth(4, 0.05);
        let cs = theoretical_moments(&p);
        assert_abs_diff_eq!(init_rho(&cs).unwrap(), 0.05, epsilon = 1e-10);
    }

    #[test]
    fn init_rho_on_simulated_panel() {
        let p = testutil::propagating_truth(4, 0.7);
        let panel = simulate(&p, 124, 33, 3).unwrap();
        let chat = cov::empirical_cov(&panel, 3).unwrap();
        let rho0 = init_rho(&chat).unwrap();
        assert!((rho0 - 0.7).abs() < 0.05, "rho0 = {rho0}");
    }

    #[test]
    fn init_rho_errors_when_everything_excluded() {
        let zero = CovSet::new(vec![DMatrix::identity(2, 2); 4], cov::CovSource::Empirical).unwrap();
        // C_2 identically zero: all entries excluded.
        let lags = vec![
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
        ];
        let cs = CovSet::new(lags, cov::CovSource::Empirical).unwrap();
        assert!(init_rho(&cs).is_err());
        drop(zero);
    }

    #[test]
    fn init_lambda_recovers_loading_up_to_sign() {
        let p = testutil::propagating_truth(3, 0.7);
        let cs = theoretical_moments(&p);
        let lambda0 = init_lambda(&cs, &p.latent, 7, 80_000, 2).unwrap();
        let truth = p.realize_loading().unwrap();
        let direct = linalg::frobenius_dist(&lambda0, &truth);
        let flipped = linalg::frobenius_dist(&(-&lambda0), &truth);
        assert!(
            direct.min(flipped) < 1e-4,
            "recovery error {} (flipped {})",
            direct,
            flipped
        );
    }

    #[test]
    fn init_lambda_zero_truth_returns_near_zero() {
        let k = 3;
        let lags = vec![DMatrix::identity(k, k), DMatrix::zeros(k, k), DMatrix::zeros(k, k), DMatrix::zeros(k, k)];
        let cs = CovSet::new(lags, cov::CovSource::Theoretical).unwrap();
        let latent = unit_latent(ModelVariant::Full, 0.6, 0.0);
        let lambda0 = init_lambda(&cs, &latent, 1, 20_000, 1).unwrap();
        assert!(linalg::frobenius_norm(&lambda0) < 1e-3, "norm {}", linalg::frobenius_norm(&lambda0));
    }

    #[test]
    fn init_gamma_exact_on_theoretical_moments() {
        let p = testutil::propagating_truth(4, 0.65);
        let cs = theoretical_moments(&p);
        let lambda = p.realize_loading().unwrap();
        let gamma0 = init_gamma(&cs, &p.latent, &lambda).unwrap();
        let truth = p.realize_noise().unwrap();
        assert!(linalg::frobenius_dist(&gamma0, &truth) < 1e-10);
    }

    #[test]
    fn init_gamma_zero_loading_returns_projected_c0() {
        let p = testutil::propagating_truth(3, 0.5);
        let cs = theoretical_moments(&p);
        let zero = DMatrix::zeros(3, 3);
        let gamma0 = init_gamma(&cs, &p.latent, &zero).unwrap();
        assert!(linalg::frobenius_dist(&gamma0, cs.lag(0)) < 1e-10);
    }

    #[test]
    fn gmm_objective_zero_at_truth_positive_at_sign_mix() {
        let p = testutil::propagating_truth(3, 0.7);
        let cs = theoretical_moments(&p);
        let problem = GmmProblem::new(&cs, ModelVariant::Full, &p.grid).unwrap();
        let z = problem.encode(&p.latent, &p.loading, &p.noise).unwrap();
        let at_truth = problem.objective(&z);
        assert!(at_truth < 1e-18, "objective at truth = {at_truth}");

        // Flip one loading column: the objective must move strictly above 0.
        let mut lambda = p.realize_loading().unwrap();
        for i in 0..3 {
            lambda[(i, 0)] = -lambda[(i, 0)];
        }
        let z_mixed = problem
            .encode(&p.latent, &LoadingSpec::Full(lambda), &p.noise)
            .unwrap();
        let mixed = problem.objective(&z_mixed);
        assert!(mixed > 1e-3, "sign-mixed objective = {mixed}");
    }

    #[test]
    fn gmm_fit_descends_from_initializer() {
        let truth = testutil::propagating_truth(3, 0.7);
        let panel = simulate(&truth, 124, 20, 19).unwrap();
        let opts = FitOptions { inner_budget: 30_000, restarts: 1, ..FitOptions::new(ModelVariant::Full, FitMethod::Gmm) };
        let report = gmm_fit(&panel, &opts).unwrap();
        let first = report.trace.first().unwrap();
        let last = report.trace.last().unwrap();
        assert!(last <= first, "final objective {last} exceeds initializer {first}");
        for w in report.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "trace increased: {} -> {}", w[0], w[1]);
        }
        assert!(report.params.validate().all_passed());
    }

    #[test]
    fn ml_fit_improves_on_gmm_loglik() {
        let truth = testutil::propagating_truth(3, 0.72);
        let panel = simulate(&truth, 124, 16, 29).unwrap();
        let mut opts = FitOptions::new(ModelVariant::Full, FitMethod::Ml);
        opts.inner_budget = 30_000;
        opts.restarts = 1;
        opts.max_iterations = 120;
        let report = ml_fit(&panel, &opts).unwrap();
        let gmm_ll = panel_loglik(report.initializer.as_ref().unwrap(), &panel).unwrap();
        let ml_ll = *report.trace.last().unwrap();
        assert!(ml_ll >= gmm_ll - 1e-8, "ML {ml_ll} should not trail GMM {gmm_ll}");
        for w in report.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-10, "loglik trace decreased: {} -> {}", w[0], w[1]);
        }
        // Recovered rho in the right neighborhood.
        match report.params.latent {
            LatentSpec::Ar1 { rho, .. } => assert!((rho - 0.72).abs() < 0.08, "rho = {rho}"),
            _ => panic!("wrong order"),
        }
    }

    #[test]
    fn white_noise_truth_fits_near_zero_loading() {
        let grid = SiteGrid::demo(1, 3);
        let truth = ModelParams {
            latent: LatentSpec::Ar1 { rho: 0.6, sigma: 0.8 },
            loading: LoadingSpec::Full(DMatrix::zeros(3, 3)),
            noise: NoiseSpec::Full(DMatrix::identity(3, 3)),
            grid,
        };
        let panel = simulate(&truth, 400, 8, 41).unwrap();
        let mut opts = FitOptions::new(ModelVariant::Full, FitMethod::Ml);
        opts.inner_budget = 20_000;
        opts.restarts = 1;
        opts.max_iterations = 60;
        let report = ml_fit(&panel, &opts).unwrap();
        let lambda = report.params.realize_loading().unwrap();
        let max_entry = lambda.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_entry < 0.12, "loading should be near zero, max entry {max_entry}");
    }

    #[test]
    fn options_validation() {
        let mut opts = FitOptions::new(ModelVariant::Full, FitMethod::Gmm);
        opts.rel_tolerance = 0.0;
        let p = testutil::propagating_truth(3, 0.5);
        let panel = simulate(&p, 30, 2, 1).unwrap();
        assert!(gmm_fit(&panel, &opts).is_err());
    }

    #[test]
    fn variant_parameter_counts() {
        assert_eq!(ModelVariant::Full.naive_parameter_count(18), 54 + 171 + 1);
        assert_eq!(ModelVariant::Ar2.naive_parameter_count(18), 54 + 171 + 2);
        assert_eq!(ModelVariant::PolyLoading.naive_parameter_count(18), 15 + 171 + 1);
        assert_eq!(ModelVariant::GaussNoise.naive_parameter_count(18), 54 + 22 + 1);
    }
}
