//! Reduced parametric structures for the loading matrix and the
//! observation-noise covariance: distance-based correlation kernels on an
//! anisotropic metric, and a longitude-polynomial loading with per-latitude
//! intercepts.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WindError};
use crate::grid::SiteGrid;
use crate::optim::{nelder_mead_restarts, NelderMeadOptions};

/// Kilometers per degree of latitude (and of longitude at the equator).
pub const KM_PER_DEG: f64 = 111.2;

/// Quadratic-form coefficients of the anisotropic distance on
/// (delta-lat, delta-lon) in kilometers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyParams {
    pub theta1: f64,
    pub theta2: f64,
}

impl AnisotropyParams {
    /// The quadratic form `dlat^2 + theta1 dlon^2 + theta2 dlat dlon` is
    /// positive definite iff `theta1 > theta2^2 / 4`.
    pub fn is_valid(&self) -> bool {
        self.theta1.is_finite() && self.theta2.is_finite() && self.theta1 > 0.25 * self.theta2 * self.theta2
    }
}

/// Pairwise anisotropic distances in kilometers.
///
/// Degree offsets are converted with the equirectangular approximation:
/// `dlat_km = 111.2 ddeg`, `dlon_km = 111.2 cos(mean grid latitude) ddeg`.
pub fn anisotropic_distance(grid: &SiteGrid, aniso: &AnisotropyParams) -> Result<DMatrix<f64>> {
    if !aniso.is_valid() {
        return Err(WindError::invalid_params(format!(
            "anisotropy constraint theta1 > theta2^2/4 violated: theta1={}, theta2={}",
            aniso.theta1, aniso.theta2
        )));
    }
    let k = grid.len();
    let mean_lat: f64 = grid.sites().iter().map(|s| s.lat).sum::<f64>() / k as f64;
    let lon_scale = KM_PER_DEG * mean_lat.to_radians().cos();
    let mut d = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in (i + 1)..k {
            let dlat = KM_PER_DEG * (grid.site(j).lat - grid.site(i).lat);
            let dlon = lon_scale * (grid.site(j).lon - grid.site(i).lon);
            let q = dlat * dlat + aniso.theta1 * dlon * dlon + aniso.theta2 * dlat * dlon;
            let dist = q.max(0.0).sqrt();
            d[(i, j)] = dist;
            d[(j, i)] = dist;
        }
    }
    Ok(d)
}

/// Per-site scales plus range/nugget/anisotropy of a distance kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseKernelParams {
    pub sigmas: Vec<f64>,
    /// Range parameter (lambda_1).
    pub range: f64,
    /// Nugget (lambda_2).
    pub nugget: f64,
    pub aniso: AnisotropyParams,
}

impl NoiseKernelParams {
    pub fn is_valid(&self) -> bool {
        self.sigmas.iter().all(|s| s.is_finite() && *s > 0.0)
            && self.range.is_finite()
            && self.range > 0.0
            && self.nugget.is_finite()
            && self.nugget >= 0.0
            && self.aniso.is_valid()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Gauss,
    Wave,
}

/// `Gamma_ij = sigma_i sigma_j (exp(-lambda1 d_ij^2) + lambda2 delta_ij)`.
pub fn gamma_gauss(sigmas: &[f64], range: f64, nugget: f64, dist: &DMatrix<f64>) -> DMatrix<f64> {
    kernel_matrix(sigmas, nugget, dist, |d| (-range * d * d).exp())
}

/// `Gamma_ij = sigma_i sigma_j (sin(lambda1 d_ij)/(lambda1 d_ij) + lambda2 delta_ij)`
/// with the zero-distance limit of the sinc taken as one. Off-diagonal
/// entries can be negative, which is the point of this kernel.
pub fn gamma_wave(sigmas: &[f64], range: f64, nugget: f64, dist: &DMatrix<f64>) -> DMatrix<f64> {
    kernel_matrix(sigmas, nugget, dist, |d| {
        let x = range * d;
        if x == 0.0 {
            1.0
        } else {
            x.sin() / x
        }
    })
}

fn kernel_matrix<F>(sigmas: &[f64], nugget: f64, dist: &DMatrix<f64>, corr: F) -> DMatrix<f64>
where
    F: Fn(f64) -> f64,
{
    let k = sigmas.len();
    debug_assert_eq!(dist.nrows(), k);
    let mut g = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let delta = if i == j { nugget } else { 0.0 };
            g[(i, j)] = sigmas[i] * sigmas[j] * (corr(dist[(i, j)]) + delta);
        }
    }
    g
}

pub fn realize_kernel(kind: KernelKind, params: &NoiseKernelParams, grid: &SiteGrid) -> Result<DMatrix<f64>> {
    if params.sigmas.len() != grid.len() {
        return Err(WindError::invalid_params(format!(
            "kernel has {} scales for {} sites",
            params.sigmas.len(),
            grid.len()
        )));
    }
    if !params.is_valid() {
        return Err(WindError::invalid_params("kernel parameters violate positivity constraints"));
    }
    let d = anisotropic_distance(grid, &params.aniso)?;
    Ok(match kind {
        KernelKind::Gauss => gamma_gauss(&params.sigmas, params.range, params.nugget, &d),
        KernelKind::Wave => gamma_wave(&params.sigmas, params.range, params.nugget, &d),
    })
}

/// Longitude-polynomial loading: each column of the realized K x 3 matrix is
/// `intercept(latitude) + linear * lon + quadratic * lon^2`, with a separate
/// intercept per latitude line (exactly three lines required) and longitude
/// centered to its grid mean before forming the design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyLoading {
    /// `intercepts[c][l]`: intercept of loading column `c` on latitude line
    /// `l` (latitudes sorted ascending).
    pub intercepts: [[f64; 3]; 3],
    pub linear: [f64; 3],
    pub quadratic: [f64; 3],
}

impl PolyLoading {
    pub fn zeros() -> Self {
        PolyLoading { intercepts: [[0.0; 3]; 3], linear: [0.0; 3], quadratic: [0.0; 3] }
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        for col in out.intercepts.iter_mut() {
            for v in col.iter_mut() {
                *v *= c;
            }
        }
        for v in out.linear.iter_mut() {
            *v *= c;
        }
        for v in out.quadratic.iter_mut() {
            *v *= c;
        }
        out
    }

    pub fn coefficient_count() -> usize {
        15
    }
}

fn centered_longitudes(grid: &SiteGrid) -> Vec<f64> {
    let lons = grid.longitudes();
    let mean = lons.iter().sum::<f64>() / lons.len() as f64;
    lons.iter().map(|l| l - mean).collect()
}

fn latitude_line_indices(grid: &SiteGrid) -> Result<Vec<usize>> {
    let distinct = grid.distinct_latitudes();
    if distinct.len() != 3 {
        return Err(WindError::invalid_params(format!(
            "polynomial loading requires exactly 3 distinct latitudes, grid has {}",
            distinct.len()
        )));
    }
    Ok(grid
        .sites()
        .iter()
        .map(|s| distinct.iter().position(|&l| l == s.lat).unwrap())
        .collect())
}

/// Realize the polynomial loading on a grid.
pub fn lambda_polynomial(poly: &PolyLoading, grid: &SiteGrid) -> Result<DMatrix<f64>> {
    let lat_idx = latitude_line_indices(grid)?;
    let lon = centered_longitudes(grid);
    let k = grid.len();
    let mut lambda = DMatrix::zeros(k, 3);
    for i in 0..k {
        for c in 0..3 {
            lambda[(i, c)] =
                poly.intercepts[c][lat_idx[i]] + poly.linear[c] * lon[i] + poly.quadratic[c] * lon[i] * lon[i];
        }
    }
    Ok(lambda)
}

/// Least-squares fit of the polynomial structure to a target K x 3 loading.
/// The problem is linear in the 15 coefficients and solved column by column
/// through 5 x 5 normal equations.
pub fn fit_polynomial_loading(target: &DMatrix<f64>, grid: &SiteGrid) -> Result<PolyLoading> {
    if target.nrows() != grid.len() || target.ncols() != 3 {
        return Err(WindError::invalid_params("polynomial fit target must be K x 3"));
    }
    let lat_idx = latitude_line_indices(grid)?;
    let lon = centered_longitudes(grid);
    let k = grid.len();

    // Design: [1{lat=0}, 1{lat=1}, 1{lat=2}, lon, lon^2]
    let mut design = DMatrix::zeros(k, 5);
    for i in 0..k {
        design[(i, lat_idx[i])] = 1.0;
        design[(i, 3)] = lon[i];
        design[(i, 4)] = lon[i] * lon[i];
    }
    let gram = design.transpose() * &design;
    let chol = nalgebra::Cholesky::new(gram).ok_or_else(|| {
        WindError::numerical("polynomial design is singular; grid longitudes are degenerate")
    })?;

    let mut poly = PolyLoading::zeros();
    for c in 0..3 {
        let rhs = design.transpose() * target.column(c);
        let beta = chol.solve(&rhs);
        for l in 0..3 {
            poly.intercepts[c][l] = beta[l];
        }
        poly.linear[c] = beta[3];
        poly.quadratic[c] = beta[4];
    }
    Ok(poly)
}

/// Result of a kernel least-squares fit.
#[derive(Debug, Clone)]
pub struct KernelFit {
    pub params: NoiseKernelParams,
    /// Sum of squared entrywise residuals at the returned parameters.
    pub residual: f64,
    /// False when the optimizer exhausted its budget without meeting its
    /// internal tolerance; the returned parameters are still the best found.
    pub converged: bool,
}

/// Transformed coordinates keep every constraint satisfied by construction:
/// scales and range/nugget on log scale, anisotropy as
/// `(theta2, log(theta1 - theta2^2/4))`.
fn kernel_to_free(p: &NoiseKernelParams) -> DVector<f64> {
    let k = p.sigmas.len();
    let mut z = DVector::zeros(k + 4);
    for i in 0..k {
        z[i] = p.sigmas[i].ln();
    }
    z[k] = p.range.ln();
    z[k + 1] = p.nugget.max(1e-12).ln();
    z[k + 2] = p.aniso.theta2;
    z[k + 3] = (p.aniso.theta1 - 0.25 * p.aniso.theta2 * p.aniso.theta2).ln();
    z
}

fn kernel_from_free(z: &DVector<f64>, k: usize) -> NoiseKernelParams {
    let sigmas: Vec<f64> = (0..k).map(|i| z[i].exp()).collect();
    let theta2 = z[k + 2];
    let theta1 = z[k + 3].exp() + 0.25 * theta2 * theta2;
    NoiseKernelParams {
        sigmas,
        range: z[k].exp(),
        nugget: z[k + 1].exp(),
        aniso: AnisotropyParams { theta1, theta2 },
    }
}

/// Entrywise least-squares fit of a distance kernel to a target K x K
/// matrix. Multistart Nelder-Mead over the transformed parameters; the
/// starting ranges bracket the scale of the grid distances.
pub fn fit_noise_kernel(
    target: &DMatrix<f64>,
    grid: &SiteGrid,
    kind: KernelKind,
    seed: u64,
    max_evaluations: usize,
) -> Result<KernelFit> {
    let k = grid.len();
    if target.nrows() != k || target.ncols() != k {
        return Err(WindError::invalid_params("kernel fit target must be K x K"));
    }
    if !target.iter().all(|v| v.is_finite()) {
        return Err(WindError::invalid_data("kernel fit target contains non-finite entries"));
    }

    let objective = |z: &DVector<f64>| -> f64 {
        let params = kernel_from_free(z, k);
        match realize_kernel(kind, &params, grid) {
            Ok(g) => crate::linalg::frobenius_dist(&g, target).powi(2),
            Err(_) => f64::INFINITY,
        }
    };

    // Reference distance scale on the isotropic metric.
    let iso = AnisotropyParams { theta1: 1.0, theta2: 0.0 };
    let d0 = anisotropic_distance(grid, &iso)?;
    let mut offdiag: Vec<f64> = (0..k)
        .flat_map(|i| ((i + 1)..k).map(move |j| (i, j)))
        .map(|(i, j)| d0[(i, j)])
        .collect();
    offdiag.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med_d = if offdiag.is_empty() { 1.0 } else { offdiag[offdiag.len() / 2].max(1e-6) };

    let sigma0: Vec<f64> = (0..k).map(|i| target[(i, i)].abs().max(1e-8).sqrt() / 1.05f64.sqrt()).collect();
    let range_starts = match kind {
        KernelKind::Gauss => vec![0.3 / (med_d * med_d), 1.0 / (med_d * med_d), 3.0 / (med_d * med_d)],
        KernelKind::Wave => vec![0.5 / med_d, 1.5 / med_d, 4.0 / med_d],
    };

    let opts = NelderMeadOptions {
        max_evaluations: max_evaluations / (2 * range_starts.len()).max(1),
        f_tol: 1e-14,
        initial_step: 0.25,
    };
    let mut best: Option<(DVector<f64>, f64, bool)> = None;
    for (idx, r0) in range_starts.iter().enumerate() {
        let start = NoiseKernelParams {
            sigmas: sigma0.clone(),
            range: *r0,
            nugget: 0.05,
            aniso: AnisotropyParams { theta1: 1.0, theta2: 0.0 },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(idx as u64));
        let res = nelder_mead_restarts(objective, &kernel_to_free(&start), &opts, 1, 0.3, &mut rng);
        if best.as_ref().map_or(true, |b| res.value < b.1) {
            best = Some((res.x, res.value, res.converged));
        }
    }
    let (z, residual, converged) = best.expect("at least one start");
    Ok(KernelFit { params: kernel_from_free(&z, k), residual, converged })
}
