//! EM and generalized-EM steps for maximum likelihood.
//!
//! The augmented state contains three consecutive latent values, so all the
//! sufficient statistics of the complete-data likelihood (initial law,
//! scalar latent transitions, observation regression) reduce to smoothed
//! second moments of single states; no cross-time moments are required.
//!
//! The latent (rho, sigma) update maximizes the full intermediate function
//! including the stationary initial-law term, with sigma^2 profiled out in
//! closed form and the autoregressive coefficients maximized by a bounded
//! 1-D or 2-D search. Together with exact or accept-only-improvement blocks
//! for the loading and the noise, every step is a true (G)EM step and the
//! observed log-likelihood cannot decrease.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Result, WindError};
use crate::kalman;
use crate::linalg::{self, CompensatedSum};
use crate::model::{LatentSpec, LoadingSpec, ModelParams, NoiseSpec, Panel, Stage};
use crate::optim;
use crate::parametric::{self, PolyLoading};

/// Default evaluation budget for the numerical noise-kernel block of a GEM
/// step.
pub const DEFAULT_GEM_BUDGET: usize = 4_000;

/// Pooled smoothed moments of one E-step.
#[derive(Debug, Clone)]
pub(crate) struct SuffStats {
    /// Sum over replicates and times of `y_t y_t^T` (K x K).
    pub syy: DMatrix<f64>,
    /// Sum of `y_t E[Z_t|Y]^T` (K x 3).
    pub szy: DMatrix<f64>,
    /// Sum of `E[Z_t Z_t^T|Y]` (3 x 3).
    pub szz: DMatrix<f64>,
    /// Sum over replicates of `E[Z_1 Z_1^T|Y]` at the first time (3 x 3).
    pub z1: DMatrix<f64>,
    pub n_rep: usize,
    pub t_len: usize,
    /// Log-likelihood of the parameters the E-step ran at.
    pub loglik: f64,
}

impl SuffStats {
    pub fn n_obs(&self) -> usize {
        self.n_rep * self.t_len
    }
}

/// Smooth every replicate and pool the moments. Replicates run in parallel;
/// the reduction is in replicate order, so results are deterministic.
pub(crate) fn e_step(params: &ModelParams, panel: &Panel) -> Result<SuffStats> {
    panel.require_stage(Stage::TransformedCentered)?;
    let ssm = kalman::build_state_space(params)?;
    let k = panel.k();
    let t_len = panel.t_len();

    let per_rep: Result<Vec<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, f64)>> = panel
        .replicates()
        .par_iter()
        .map(|series| {
            let sm = kalman::smooth(&ssm, series)?;
            let mut szz = DMatrix::zeros(3, 3);
            let mut szy = DMatrix::zeros(k, 3);
            let mut syy = DMatrix::zeros(k, k);
            for t in 0..t_len {
                let m = &sm.smoothed_mean[t];
                let v = &sm.smoothed_cov[t];
                szz += v + m * m.transpose();
                let y_t = series.row(t).transpose();
                szy += &y_t * m.transpose();
                syy += &y_t * y_t.transpose();
            }
            let m1 = &sm.smoothed_mean[0];
            let z1 = &sm.smoothed_cov[0] + m1 * m1.transpose();
            Ok((syy, szy, szz, z1, sm.log_likelihood))
        })
        .collect();
    let per_rep = per_rep?;

    let mut stats = SuffStats {
        syy: DMatrix::zeros(k, k),
        szy: DMatrix::zeros(k, 3),
        szz: DMatrix::zeros(3, 3),
        z1: DMatrix::zeros(3, 3),
        n_rep: panel.n_replicates(),
        t_len,
        loglik: 0.0,
    };
    let mut ll = CompensatedSum::new();
    for (syy, szy, szz, z1, rep_ll) in per_rep {
        stats.syy += syy;
        stats.szy += szy;
        stats.szz += szz;
        stats.z1 += z1;
        ll.add(rep_ll);
    }
    stats.loglik = ll.value();
    Ok(stats)
}

/// Infinite-data limit of the E-step at the given parameters: smoothed
/// moments are replaced by their expectations under the model, which turn
/// into stationary covariances. The M-step must fix the true parameters.
pub(crate) fn population_stats(params: &ModelParams, t_len: usize, n_rep: usize) -> Result<SuffStats> {
    let ssm = kalman::build_state_space(params)?;
    let c0 = crate::cov::theoretical_cov_ss(params, 0)?;
    let scale = (n_rep * t_len) as f64;
    Ok(SuffStats {
        syy: c0.lag(0) * scale,
        szy: &ssm.obs_map * &ssm.init_cov * scale,
        szz: &ssm.init_cov * scale,
        z1: &ssm.init_cov * n_rep as f64,
        n_rep,
        t_len,
        loglik: 0.0,
    })
}

// ---------------------------------------------------------------------------
// Latent block: exact M-step over (rho, sigma) including the initial term.
// ---------------------------------------------------------------------------

/// Intermediate-function value of the latent block (additive constants
/// dropped), used both to pick the update and to guard monotonicity.
fn q_latent(latent: &LatentSpec, stats: &SuffStats) -> f64 {
    let r = stats.n_rep as f64;
    let n_tot = r * (stats.t_len as f64 + 2.0);
    match *latent {
        LatentSpec::Ar1 { rho, sigma } => {
            let sigma2 = sigma * sigma;
            let g = ar1_quadratic(rho, stats);
            -0.5 * (n_tot * sigma2.ln() - r * (1.0 - rho * rho).ln() + g / sigma2)
        }
        LatentSpec::Ar2 { rho1, rho2, sigma } => {
            let sigma2 = sigma * sigma;
            let (g, logdet_k2) = match ar2_quadratic(rho1, rho2, stats) {
                Some(v) => v,
                None => return f64::NEG_INFINITY,
            };
            -0.5 * (n_tot * sigma2.ln() + r * logdet_k2 + g / sigma2)
        }
    }
}

/// `G(rho) = Minit (1 - rho^2) + E[sum (X_t - rho X_{t-1})^2]` from the
/// windowed moments; per-replicate path indices: the initial value is
/// `Z_1[2]`, the pairs `(X_t, X_{t-1})` are `(Z_1[1], Z_1[2])` and
/// `(Z_t[0], Z_t[1])` for t = 1..T.
fn ar1_quadratic(rho: f64, stats: &SuffStats) -> f64 {
    let m_init = stats.z1[(2, 2)];
    let s_cross = stats.z1[(1, 2)] + stats.szz[(0, 1)];
    let s_prev = stats.z1[(2, 2)] + stats.szz[(1, 1)];
    let s_curr = stats.z1[(1, 1)] + stats.szz[(0, 0)];
    m_init * (1.0 - rho * rho) + (s_curr - 2.0 * rho * s_cross + rho * rho * s_prev)
}

/// AR(2) counterpart: `G = tr(K2^{-1} M01) + a^T S3 a` with
/// `a = (1, -rho1, -rho2)`, plus `log det K2` of the unit-noise stationary
/// covariance of the initial pair. Returns None outside the stationarity
/// region.
fn ar2_quadratic(rho1: f64, rho2: f64, stats: &SuffStats) -> Option<(f64, f64)> {
    if !(rho1 + rho2 < 1.0 && rho2 - rho1 < 1.0 && rho2.abs() < 1.0) {
        return None;
    }
    // Stationary variance per unit sigma^2 and lag-1 autocorrelation.
    let g0 = (1.0 - rho2) / ((1.0 + rho2) * ((1.0 - rho2) * (1.0 - rho2) - rho1 * rho1));
    if !(g0 > 0.0) || !g0.is_finite() {
        return None;
    }
    let r1 = rho1 / (1.0 - rho2);
    let det = g0 * g0 * (1.0 - r1 * r1);
    if !(det > 0.0) {
        return None;
    }
    // K2^{-1} = [[1, -r1], [-r1, 1]] / (g0 (1 - r1^2)).
    let m01_11 = stats.z1[(1, 1)];
    let m01_12 = stats.z1[(1, 2)];
    let m01_22 = stats.z1[(2, 2)];
    let tr_init = (m01_11 - 2.0 * r1 * m01_12 + m01_22) / (g0 * (1.0 - r1 * r1));

    let a = DVector::from_vec(vec![1.0, -rho1, -rho2]);
    let sse = (a.transpose() * &stats.szz * &a)[(0, 0)];
    Some((tr_init + sse, det.ln()))
}

const RHO_BOUND: f64 = 0.9995;

/// Exact latent M-step for the AR(1): profile sigma^2 analytically, maximize
/// the 1-D profile in rho by grid + golden section, and never return a point
/// below the current one.
fn latent_update_ar1(current: &LatentSpec, stats: &SuffStats) -> LatentSpec {
    let r = stats.n_rep as f64;
    let n_tot = r * (stats.t_len as f64 + 2.0);
    let profile = |rho: f64| -> f64 {
        let g = ar1_quadratic(rho, stats);
        if !(g > 0.0) {
            return f64::NEG_INFINITY;
        }
        -n_tot * g.ln() + r * (1.0 - rho * rho).ln()
    };
    let (mut best_rho, best_val) = optim::grid_then_golden_max(&profile, -RHO_BOUND, RHO_BOUND, 80, 1e-13);

    // Regression candidate (the no-initial-term closed form).
    let s_cross = stats.z1[(1, 2)] + stats.szz[(0, 1)];
    let s_prev = stats.z1[(2, 2)] + stats.szz[(1, 1)];
    if s_prev > 0.0 {
        let reg = (s_cross / s_prev).clamp(-RHO_BOUND, RHO_BOUND);
        if profile(reg) > best_val {
            best_rho = reg;
        }
    }

    let candidate = {
        let sigma2 = ar1_quadratic(best_rho, stats) / n_tot;
        LatentSpec::Ar1 { rho: best_rho, sigma: sigma2.max(1e-300).sqrt() }
    };
    if q_latent(&candidate, stats) >= q_latent(current, stats) {
        candidate
    } else {
        current.clone()
    }
}

/// AR(2) latent M-step: coarse grid over the partial-autocorrelation square,
/// Nelder-Mead refinement, regression candidate, and the current point as a
/// floor.
fn latent_update_ar2(current: &LatentSpec, stats: &SuffStats) -> LatentSpec {
    let r = stats.n_rep as f64;
    let n_tot = r * (stats.t_len as f64 + 2.0);
    let profile_rho = |rho1: f64, rho2: f64| -> f64 {
        match ar2_quadratic(rho1, rho2, stats) {
            Some((g, logdet)) if g > 0.0 => -n_tot * g.ln() - r * logdet,
            _ => f64::NEG_INFINITY,
        }
    };
    // Partial autocorrelations parametrize the stationarity triangle.
    let to_rho = |phi1: f64, phi2: f64| (phi1 * (1.0 - phi2), phi2);
    let profile_phi = |z: &DVector<f64>| -> f64 {
        let (phi1, phi2) = (z[0].tanh() * RHO_BOUND, z[1].tanh() * RHO_BOUND);
        let (rho1, rho2) = to_rho(phi1, phi2);
        -profile_rho(rho1, rho2)
    };

    let consider = |best: &mut Option<(f64, f64, f64)>, rho1: f64, rho2: f64| {
        let v = profile_rho(rho1, rho2);
        if best.map_or(true, |b| v > b.2) {
            *best = Some((rho1, rho2, v));
        }
    };
    let mut best: Option<(f64, f64, f64)> = None;
    let cells = 16;
    for i in 0..=cells {
        for j in 0..=cells {
            let phi1 = -0.95 + 1.9 * i as f64 / cells as f64;
            let phi2 = -0.95 + 1.9 * j as f64 / cells as f64;
            let (rho1, rho2) = to_rho(phi1, phi2);
            consider(&mut best, rho1, rho2);
        }
    }
    // Regression candidate from the windowed transition moments.
    let s = &stats.szz;
    let det = s[(1, 1)] * s[(2, 2)] - s[(1, 2)] * s[(2, 1)];
    if det.abs() > 1e-12 * s[(1, 1)].abs().max(1.0) {
        let r1 = (s[(0, 1)] * s[(2, 2)] - s[(0, 2)] * s[(1, 2)]) / det;
        let r2 = (s[(0, 2)] * s[(1, 1)] - s[(0, 1)] * s[(2, 1)]) / det;
        consider(&mut best, r1, r2);
    }
    if let LatentSpec::Ar2 { rho1, rho2, .. } = current {
        consider(&mut best, *rho1, *rho2);
    }

    let (rho1_0, rho2_0, _) = best.expect("grid produced candidates");
    // Refine in transformed coordinates from the best candidate so far.
    let phi2_0 = rho2_0.clamp(-RHO_BOUND + 1e-6, RHO_BOUND - 1e-6);
    let phi1_0 = (rho1_0 / (1.0 - phi2_0)).clamp(-RHO_BOUND + 1e-6, RHO_BOUND - 1e-6);
    let z0 = DVector::from_vec(vec![
        (phi1_0 / RHO_BOUND).atanh(),
        (phi2_0 / RHO_BOUND).atanh(),
    ]);
    let opts = optim::NelderMeadOptions { max_evaluations: 600, f_tol: 1e-14, initial_step: 0.05 };
    let refined = optim::nelder_mead(profile_phi, &z0, &opts);
    let (phi1, phi2) = (refined.x[0].tanh() * RHO_BOUND, refined.x[1].tanh() * RHO_BOUND);
    let (rho1_r, rho2_r) = to_rho(phi1, phi2);
    consider(&mut best, rho1_r, rho2_r);

    let (rho1, rho2, _) = best.unwrap();
    let candidate = match ar2_quadratic(rho1, rho2, stats) {
        Some((g, _)) => {
            let sigma2 = g / n_tot;
            LatentSpec::Ar2 { rho1, rho2, sigma: sigma2.max(1e-300).sqrt() }
        }
        None => return current.clone(),
    };
    if q_latent(&candidate, stats) >= q_latent(current, stats) {
        candidate
    } else {
        current.clone()
    }
}

fn latent_update(current: &LatentSpec, stats: &SuffStats) -> LatentSpec {
    match current {
        LatentSpec::Ar1 { .. } => latent_update_ar1(current, stats),
        LatentSpec::Ar2 { .. } => latent_update_ar2(current, stats),
    }
}

// ---------------------------------------------------------------------------
// Observation block: loading and noise updates.
// ---------------------------------------------------------------------------

/// Residual second moment `sum E[(y - Lambda Z)(y - Lambda Z)^T]`.
fn residual_moment(lambda: &DMatrix<f64>, stats: &SuffStats) -> DMatrix<f64> {
    let cross = &stats.szy * lambda.transpose();
    let mut res = &stats.syy - &cross - cross.transpose() + lambda * &stats.szz * lambda.transpose();
    linalg::symmetrize(&mut res);
    res
}

/// Observation part of the intermediate function (constants dropped).
fn q_obs(lambda: &DMatrix<f64>, gamma: &DMatrix<f64>, stats: &SuffStats) -> f64 {
    let chol = match nalgebra::Cholesky::new(linalg::sym(gamma)) {
        Some(c) => c,
        None => return f64::NEG_INFINITY,
    };
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let res = residual_moment(lambda, stats);
    let trace = chol.solve(&res).trace();
    -0.5 * (stats.n_obs() as f64 * logdet + trace)
}

/// Exact maximizer of the observation regression over a free loading:
/// `Lambda = Szy Szz^{-1}` (independent of Gamma).
fn full_loading_update(stats: &SuffStats) -> Result<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(linalg::sym(&stats.szz))
        .ok_or_else(|| WindError::numerical("smoothed state second moment is singular"))?;
    Ok(chol.solve(&stats.szy.transpose()).transpose())
}

/// Exact generalized-least-squares update of the polynomial loading
/// coefficients at fixed noise covariance. The loading is linear in the 15
/// coefficients, so the block maximizer solves a 15 x 15 SPD system.
fn poly_loading_update(
    current: &PolyLoading,
    gamma: &DMatrix<f64>,
    grid: &crate::grid::SiteGrid,
    stats: &SuffStats,
) -> Result<PolyLoading> {
    let basis = poly_basis(grid)?;
    let p = basis.len();
    let chol = nalgebra::Cholesky::new(linalg::sym(gamma))
        .ok_or_else(|| WindError::numerical("noise covariance is not PD in the loading update"))?;

    // Cache Gamma^{-1} B_p once.
    let ginv_b: Vec<DMatrix<f64>> = basis.iter().map(|b| chol.solve(b)).collect();
    let mut m = DMatrix::zeros(p, p);
    let mut c = DVector::zeros(p);
    for i in 0..p {
        c[i] = (ginv_b[i].transpose() * &stats.szy).trace();
        for j in 0..p {
            m[(i, j)] = (ginv_b[i].transpose() * (&basis[j] * &stats.szz.transpose())).trace();
        }
    }
    linalg::symmetrize(&mut m);
    let beta = match nalgebra::Cholesky::new(m.clone()) {
        Some(ch) => ch.solve(&c),
        None => {
            // Degenerate design: fall back to a pseudo-inverse solve.
            let svd = m.svd(true, true);
            svd.solve(&c, 1e-12)
                .map_err(|e| WindError::numerical(format!("loading update failed: {e}")))?
        }
    };
    let mut out = current.clone();
    let mut idx = 0;
    for col in 0..3 {
        for lat in 0..3 {
            out.intercepts[col][lat] = beta[idx];
            idx += 1;
        }
        out.linear[col] = beta[idx];
        idx += 1;
        out.quadratic[col] = beta[idx];
        idx += 1;
    }
    Ok(out)
}

/// The 15 basis loadings of the polynomial structure on a grid, in the same
/// coefficient order used by `poly_loading_update`.
fn poly_basis(grid: &crate::grid::SiteGrid) -> Result<Vec<DMatrix<f64>>> {
    let mut basis = Vec::with_capacity(15);
    for col in 0..3 {
        for lat in 0..3 {
            let mut p = PolyLoading::zeros();
            p.intercepts[col][lat] = 1.0;
            basis.push(parametric::lambda_polynomial(&p, grid)?);
        }
        let mut p = PolyLoading::zeros();
        p.linear[col] = 1.0;
        basis.push(parametric::lambda_polynomial(&p, grid)?);
        let mut p = PolyLoading::zeros();
        p.quadratic[col] = 1.0;
        basis.push(parametric::lambda_polynomial(&p, grid)?);
    }
    Ok(basis)
}

/// Numerical ascent on the noise-kernel parameters at fixed loading,
/// accepting the result only when it improves the block objective.
fn kernel_noise_update(
    kind: parametric::KernelKind,
    current: &parametric::NoiseKernelParams,
    lambda: &DMatrix<f64>,
    grid: &crate::grid::SiteGrid,
    stats: &SuffStats,
    budget: usize,
) -> (parametric::NoiseKernelParams, bool) {
    let res = residual_moment(lambda, stats);
    let n = stats.n_obs() as f64;
    let objective = |z: &DVector<f64>| -> f64 {
        let params = kernel_from_free_local(z, grid.len());
        match parametric::realize_kernel(kind, &params, grid) {
            Ok(gamma) => match nalgebra::Cholesky::new(gamma) {
                Some(chol) => {
                    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                    n * logdet + chol.solve(&res).trace()
                }
                None => f64::INFINITY,
            },
            Err(_) => f64::INFINITY,
        }
    };
    let z0 = kernel_to_free_local(current);
    let f0 = objective(&z0);
    let opts = optim::NelderMeadOptions { max_evaluations: budget, f_tol: 1e-13, initial_step: 0.05 };
    let run = optim::nelder_mead(objective, &z0, &opts);
    if run.value < f0 {
        (kernel_from_free_local(&run.x, grid.len()), true)
    } else {
        (current.clone(), false)
    }
}

fn kernel_to_free_local(p: &parametric::NoiseKernelParams) -> DVector<f64> {
    let k = p.sigmas.len();
    let mut z = DVector::zeros(k + 4);
    for i in 0..k {
        z[i] = p.sigmas[i].ln();
    }
    z[k] = p.range.ln();
    z[k + 1] = p.nugget.max(1e-12).ln();
    z[k + 2] = p.aniso.theta2;
    z[k + 3] = (p.aniso.theta1 - 0.25 * p.aniso.theta2 * p.aniso.theta2).max(1e-12).ln();
    z
}

fn kernel_from_free_local(z: &DVector<f64>, k: usize) -> parametric::NoiseKernelParams {
    let sigmas: Vec<f64> = (0..k).map(|i| z[i].exp()).collect();
    let theta2 = z[k + 2];
    parametric::NoiseKernelParams {
        sigmas,
        range: z[k].exp(),
        nugget: z[k + 1].exp(),
        aniso: parametric::AnisotropyParams { theta1: z[k + 3].exp() + 0.25 * theta2 * theta2, theta2 },
    }
}

// ---------------------------------------------------------------------------
// Step drivers.
// ---------------------------------------------------------------------------

/// Outcome of one (G)EM step.
#[derive(Debug, Clone)]
pub struct EmStep {
    /// Updated parameters, normalized and sign-canonical.
    pub params: ModelParams,
    /// Log-likelihood of the *input* parameters (the E-step byproduct).
    pub log_likelihood: f64,
    /// True when no block found an improving update (GEM only).
    pub stalled: bool,
}

fn is_full_structure(params: &ModelParams) -> bool {
    matches!(params.loading, LoadingSpec::Full(_)) && matches!(params.noise, NoiseSpec::Full(_))
}

/// One EM iteration for the fully parametrized model: analytic joint update
/// of loading and noise, exact latent profile, then renormalization.
pub fn em_step(params: &ModelParams, panel: &Panel) -> Result<EmStep> {
    if !is_full_structure(params) {
        return Err(WindError::invalid_params(
            "em_step requires full loading and noise; use gem_step for reduced structures",
        ));
    }
    shared_step(params, panel, DEFAULT_GEM_BUDGET)
}

/// One generalized-EM iteration for reduced structures: block updates that
/// accept only improvements of the intermediate function.
pub fn gem_step(params: &ModelParams, panel: &Panel, budget: usize) -> Result<EmStep> {
    if is_full_structure(params) {
        return Err(WindError::invalid_params(
            "gem_step expects at least one reduced structure; use em_step",
        ));
    }
    shared_step(params, panel, budget)
}

pub(crate) fn shared_step(params: &ModelParams, panel: &Panel, budget: usize) -> Result<EmStep> {
    let stats = e_step(params, panel)?;
    let (updated, stalled) = m_step(params, &stats, budget)?;
    Ok(EmStep { params: updated, log_likelihood: stats.loglik, stalled })
}

pub(crate) fn m_step(params: &ModelParams, stats: &SuffStats, budget: usize) -> Result<(ModelParams, bool)> {
    let grid = &params.grid;
    let lambda_cur = params.realize_loading()?;
    let gamma_cur = params.realize_noise()?;
    let mut stalled = true;

    // Loading block.
    let (loading, lambda_new) = match &params.loading {
        LoadingSpec::Full(_) => {
            let lam = full_loading_update(stats)?;
            stalled = false;
            (LoadingSpec::Full(lam.clone()), lam)
        }
        LoadingSpec::Polynomial(poly) => {
            let cand = poly_loading_update(poly, &gamma_cur, grid, stats)?;
            let lam_cand = parametric::lambda_polynomial(&cand, grid)?;
            if q_obs(&lam_cand, &gamma_cur, stats) >= q_obs(&lambda_cur, &gamma_cur, stats) {
                stalled = false;
                (LoadingSpec::Polynomial(cand), lam_cand)
            } else {
                (params.loading.clone(), lambda_cur.clone())
            }
        }
    };

    // Noise block at the updated loading.
    let noise = match &params.noise {
        NoiseSpec::Full(_) => {
            let gamma = residual_moment(&lambda_new, stats) / stats.n_obs() as f64;
            if !linalg::is_positive_definite(&gamma) {
                return Err(WindError::numerical(
                    "noise covariance update is not positive definite",
                ));
            }
            stalled = false;
            NoiseSpec::Full(gamma)
        }
        NoiseSpec::Parametric { kind, params: kp } => {
            let (updated, improved) = kernel_noise_update(*kind, kp, &lambda_new, grid, stats, budget);
            if improved {
                stalled = false;
            }
            NoiseSpec::Parametric { kind: *kind, params: updated }
        }
    };

    // Latent block (exact profile; falls back to the current point).
    let latent = latent_update(&params.latent, stats);
    if latent != params.latent {
        stalled = false;
    }

    let updated = ModelParams { latent, loading, noise, grid: grid.clone() }
        .normalize()?
        .canonical_sign();
    Ok((updated, stalled))
}
