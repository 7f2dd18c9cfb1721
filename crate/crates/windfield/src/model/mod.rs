//! Parameter containers for the latent-factor wind-field model, their
//! validity and normalization rules, and exact simulation.
//!
//! The generative model: a scalar latent AR process `X_t` (order one or two)
//! drives all sites through a K x 3 loading on `(X_{t+1}, X_t, X_{t-1})`,
//! plus spatially correlated observation noise with covariance `Gamma`:
//!
//! ```text
//! X_{t+1} = rho X_t + sigma e_{t+1}                     (order 1)
//! X_{t+1} = rho1 X_t + rho2 X_{t-1} + sigma e_{t+1}     (order 2)
//! Y_t     = a1 X_{t+1} + a0 X_t + a-1 X_{t-1} + Gamma^{1/2} n_t
//! ```
//!
//! Identification pins the stationary variance of `X` to one and the loading
//! columns to linear independence; `normalize` and `canonical_sign` move any
//! parameter set to that representative without changing the law of `Y`.

mod simulate;

pub use simulate::simulate;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WindError};
use crate::grid::SiteGrid;
use crate::linalg;
use crate::parametric::{self, KernelKind, NoiseKernelParams, PolyLoading};

/// Relative tolerance on the smallest singular value of the loading for the
/// column-independence check.
pub const LOADING_SV_TOL: f64 = 1e-8;

/// Latent autoregressive dynamics.
#[derive(Debug, Clone, PartialEq)]
pub enum LatentSpec {
    Ar1 { rho: f64, sigma: f64 },
    Ar2 { rho1: f64, rho2: f64, sigma: f64 },
}

impl LatentSpec {
    pub fn order(&self) -> usize {
        match self {
            LatentSpec::Ar1 { .. } => 1,
            LatentSpec::Ar2 { .. } => 2,
        }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            LatentSpec::Ar1 { sigma, .. } | LatentSpec::Ar2 { sigma, .. } => *sigma,
        }
    }

    pub fn is_stationary(&self) -> bool {
        match self {
            LatentSpec::Ar1 { rho, sigma } => rho.abs() < 1.0 && *sigma > 0.0 && rho.is_finite() && sigma.is_finite(),
            LatentSpec::Ar2 { rho1, rho2, sigma } => {
                rho1.is_finite()
                    && rho2.is_finite()
                    && sigma.is_finite()
                    && *sigma > 0.0
                    && rho1 + rho2 < 1.0
                    && rho2 - rho1 < 1.0
                    && rho2.abs() < 1.0
            }
        }
    }

    /// Stationary variance of `X_t`.
    pub fn stationary_variance(&self) -> Result<f64> {
        if !self.is_stationary() {
            return Err(WindError::invalid_params("latent process is not stationary"));
        }
        Ok(match self {
            LatentSpec::Ar1 { rho, sigma } => sigma * sigma / (1.0 - rho * rho),
            LatentSpec::Ar2 { rho1, rho2, sigma } => {
                sigma * sigma * (1.0 - rho2) / ((1.0 + rho2) * ((1.0 - rho2) * (1.0 - rho2) - rho1 * rho1))
            }
        })
    }

    /// Lag-one autocorrelation of `X_t`.
    pub fn lag1_autocorrelation(&self) -> f64 {
        match self {
            LatentSpec::Ar1 { rho, .. } => *rho,
            LatentSpec::Ar2 { rho1, rho2, .. } => rho1 / (1.0 - rho2),
        }
    }

    /// Same dynamics with sigma rescaled so the stationary variance is one.
    fn unit_variance(&self) -> Result<LatentSpec> {
        if !self.is_stationary() {
            return Err(WindError::invalid_params("latent process is not stationary"));
        }
        Ok(match self {
            LatentSpec::Ar1 { rho, .. } => LatentSpec::Ar1 { rho: *rho, sigma: (1.0 - rho * rho).sqrt() },
            LatentSpec::Ar2 { rho1, rho2, .. } => {
                let unit_sigma2 = (1.0 + rho2) * ((1.0 - rho2) * (1.0 - rho2) - rho1 * rho1) / (1.0 - rho2);
                LatentSpec::Ar2 { rho1: *rho1, rho2: *rho2, sigma: unit_sigma2.sqrt() }
            }
        })
    }
}

/// Loading structure: free K x 3 matrix or the longitude-polynomial family.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadingSpec {
    Full(DMatrix<f64>),
    Polynomial(PolyLoading),
}

impl LoadingSpec {
    pub fn realize(&self, grid: &SiteGrid) -> Result<DMatrix<f64>> {
        match self {
            LoadingSpec::Full(m) => {
                if m.nrows() != grid.len() || m.ncols() != 3 {
                    return Err(WindError::invalid_params(format!(
                        "loading is {}x{}, expected {}x3",
                        m.nrows(),
                        m.ncols(),
                        grid.len()
                    )));
                }
                Ok(m.clone())
            }
            LoadingSpec::Polynomial(p) => parametric::lambda_polynomial(p, grid),
        }
    }

    pub(crate) fn scale(&self, c: f64) -> LoadingSpec {
        match self {
            LoadingSpec::Full(m) => LoadingSpec::Full(m * c),
            LoadingSpec::Polynomial(p) => LoadingSpec::Polynomial(p.scale(c)),
        }
    }
}

/// Observation-noise covariance: free SPD matrix or a distance kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    Full(DMatrix<f64>),
    Parametric { kind: KernelKind, params: NoiseKernelParams },
}

impl NoiseSpec {
    pub fn realize(&self, grid: &SiteGrid) -> Result<DMatrix<f64>> {
        match self {
            NoiseSpec::Full(m) => {
                if m.nrows() != grid.len() || m.ncols() != grid.len() {
                    return Err(WindError::invalid_params(format!(
                        "noise covariance is {}x{}, expected {k}x{k}",
                        m.nrows(),
                        m.ncols(),
                        k = grid.len()
                    )));
                }
                Ok(m.clone())
            }
            NoiseSpec::Parametric { kind, params } => parametric::realize_kernel(*kind, params, grid),
        }
    }
}

/// Complete parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub latent: LatentSpec,
    pub loading: LoadingSpec,
    pub noise: NoiseSpec,
    pub grid: SiteGrid,
}

/// Per-invariant diagnostic produced by [`ModelParams::validate`]; never an
/// error, failed checks carry a message.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub stationary: bool,
    pub unit_latent_variance: bool,
    pub loading_independent: bool,
    pub noise_positive_definite: bool,
    pub messages: Vec<String>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.stationary && self.unit_latent_variance && self.loading_independent && self.noise_positive_definite
    }
}

impl ModelParams {
    pub fn k(&self) -> usize {
        self.grid.len()
    }

    pub fn realize_loading(&self) -> Result<DMatrix<f64>> {
        self.loading.realize(&self.grid)
    }

    pub fn realize_noise(&self) -> Result<DMatrix<f64>> {
        self.noise.realize(&self.grid)
    }

    /// Diagnostic pass over every model invariant. Reports, never fails.
    pub fn validate(&self) -> ValidationReport {
        let mut messages = Vec::new();

        let stationary = self.latent.is_stationary();
        if !stationary {
            messages.push("latent process violates the stationarity constraints".to_string());
        }

        let unit_latent_variance = match self.latent.stationary_variance() {
            Ok(v) => {
                let ok = (v - 1.0).abs() <= 1e-8;
                if !ok {
                    messages.push(format!("stationary latent variance is {v:.6e}, expected 1"));
                }
                ok
            }
            Err(_) => false,
        };

        let loading_independent = match self.realize_loading() {
            Ok(lambda) => {
                let sv = linalg::singular_values(&lambda);
                let ok = sv.len() == 3 && sv[2] > LOADING_SV_TOL * sv[0];
                if !ok {
                    messages.push(format!(
                        "loading columns are linearly dependent (singular values {:?})",
                        sv
                    ));
                }
                ok
            }
            Err(e) => {
                messages.push(format!("loading cannot be realized: {e}"));
                false
            }
        };

        let noise_positive_definite = match self.realize_noise() {
            Ok(gamma) => {
                let sym_ok = linalg::frobenius_dist(&gamma, &gamma.transpose())
                    <= 1e-10 * linalg::frobenius_norm(&gamma).max(1.0);
                let pd = linalg::is_positive_definite(&gamma);
                if !sym_ok {
                    messages.push("noise covariance is not symmetric".to_string());
                }
                if !pd {
                    messages.push("noise covariance is not positive definite".to_string());
                }
                sym_ok && pd
            }
            Err(e) => {
                messages.push(format!("noise covariance cannot be realized: {e}"));
                false
            }
        };

        ValidationReport {
            stationary,
            unit_latent_variance,
            loading_independent,
            noise_positive_definite,
            messages,
        }
    }

    /// Hard gate shared by simulation, covariance, and filtering: the latent
    /// chain must be stationary and both structures realizable with a
    /// positive-definite noise covariance. Unit latent variance is *not*
    /// required here; it is an identification convention, not a law
    /// constraint.
    pub fn check_usable(&self) -> Result<()> {
        if !self.latent.is_stationary() {
            return Err(WindError::invalid_params("latent process is not stationary"));
        }
        let lambda = self.realize_loading()?;
        if !lambda.iter().all(|v| v.is_finite()) {
            return Err(WindError::invalid_params("loading has non-finite entries"));
        }
        let gamma = self.realize_noise()?;
        if !linalg::is_positive_definite(&gamma) {
            return Err(WindError::invalid_params("noise covariance is not positive definite"));
        }
        Ok(())
    }

    /// Rescale to the identified representative with unit stationary latent
    /// variance: `Lambda <- c Lambda`, `sigma` adjusted, where `c` is the
    /// stationary standard deviation of `X`. The law of the observed process
    /// is unchanged. Idempotent.
    pub fn normalize(&self) -> Result<ModelParams> {
        let s = self.latent.stationary_variance()?;
        if (s - 1.0).abs() < 1e-14 {
            return Ok(self.clone());
        }
        let c = s.sqrt();
        Ok(ModelParams {
            latent: self.latent.unit_variance()?,
            loading: self.loading.scale(c),
            noise: self.noise.clone(),
            grid: self.grid.clone(),
        })
    }

    /// Resolve the loading sign ambiguity: flip every column when the
    /// entries of the center column (the weights on `X_t`) sum negative.
    /// The observed-process law is unchanged.
    pub fn canonical_sign(&self) -> ModelParams {
        let lambda = match self.realize_loading() {
            Ok(l) => l,
            Err(_) => return self.clone(),
        };
        let center_sum: f64 = lambda.column(1).iter().sum();
        if center_sum < 0.0 {
            ModelParams { loading: self.loading.scale(-1.0), ..self.clone() }
        } else {
            self.clone()
        }
    }
}

/// Processing stage of a panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Raw,
    TransformedCentered,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Raw => write!(f, "raw"),
            Stage::TransformedCentered => write!(f, "transformed-centered"),
        }
    }
}

/// R independent replicates of a T x K multivariate series on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    /// One T x K matrix per replicate; row = time, column = site.
    values: Vec<DMatrix<f64>>,
    pub grid: SiteGrid,
    pub stage: Stage,
    pub time_step_hours: f64,
}

impl Panel {
    pub const DEFAULT_TIME_STEP_HOURS: f64 = 6.0;

    pub fn new(values: Vec<DMatrix<f64>>, grid: SiteGrid, stage: Stage) -> Result<Panel> {
        if values.is_empty() {
            return Err(WindError::invalid_data("panel must contain at least one replicate"));
        }
        let t_len = values[0].nrows();
        if t_len < 4 {
            return Err(WindError::invalid_data(format!(
                "panel length {t_len} is below the lag-3 minimum of 4"
            )));
        }
        for (r, m) in values.iter().enumerate() {
            if m.nrows() != t_len || m.ncols() != grid.len() {
                return Err(WindError::invalid_data(format!(
                    "replicate {r} is {}x{}, expected {t_len}x{}",
                    m.nrows(),
                    m.ncols(),
                    grid.len()
                )));
            }
            if !m.iter().all(|v| v.is_finite()) {
                return Err(WindError::invalid_data(format!("replicate {r} contains non-finite values")));
            }
        }
        Ok(Panel { values, grid, stage, time_step_hours: Self::DEFAULT_TIME_STEP_HOURS })
    }

    pub fn n_replicates(&self) -> usize {
        self.values.len()
    }

    pub fn t_len(&self) -> usize {
        self.values[0].nrows()
    }

    pub fn k(&self) -> usize {
        self.grid.len()
    }

    pub fn replicate(&self, r: usize) -> &DMatrix<f64> {
        &self.values[r]
    }

    pub fn replicates(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    /// Same grid/stage metadata with transformed values.
    pub fn with_values(&self, values: Vec<DMatrix<f64>>, stage: Stage) -> Result<Panel> {
        let mut p = Panel::new(values, self.grid.clone(), stage)?;
        p.time_step_hours = self.time_step_hours;
        Ok(p)
    }

    pub fn require_stage(&self, stage: Stage) -> Result<()> {
        if self.stage != stage {
            return Err(WindError::invalid_data(format!(
                "panel stage is '{}', expected '{}'",
                self.stage, stage
            )));
        }
        Ok(())
    }
}
