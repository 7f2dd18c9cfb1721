//! Lagged covariances of the observed process: closed form for the AR(1)
//! latent, a state-space route valid for both latent orders, empirical
//! counterparts, and the structural diagnostics that identify the model
//! (rank-one lag-2 covariance, geometric decay, non full-symmetry).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, WindError};
use crate::kalman;
use crate::linalg;
use crate::model::{LatentSpec, ModelParams, Panel, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovSource {
    Theoretical,
    Empirical,
}

/// Lagged K x K covariance matrices `C_0..C_L` with
/// `C_k[i, j] = cov(Y_t(i), Y_{t+k}(j))`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovSet {
    lags: Vec<DMatrix<f64>>,
    pub source: CovSource,
}

impl CovSet {
    pub fn new(lags: Vec<DMatrix<f64>>, source: CovSource) -> Result<CovSet> {
        if lags.is_empty() {
            return Err(WindError::invalid_data("covariance set needs at least lag 0"));
        }
        let k = lags[0].nrows();
        for (i, m) in lags.iter().enumerate() {
            if m.nrows() != k || m.ncols() != k {
                return Err(WindError::invalid_data(format!("lag {i} matrix is not {k}x{k}")));
            }
        }
        Ok(CovSet { lags, source })
    }

    pub fn max_lag(&self) -> usize {
        self.lags.len() - 1
    }

    pub fn k(&self) -> usize {
        self.lags[0].nrows()
    }

    pub fn lag(&self, k: usize) -> &DMatrix<f64> {
        &self.lags[k]
    }

    pub fn lags(&self) -> &[DMatrix<f64>] {
        &self.lags
    }
}

/// The three lag polynomials in the loading columns that generate the
/// closed-form covariances; `u` and `v` are the factor vectors of the
/// rank-one tail.
fn factor_vectors(rho: f64, lambda: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let a1 = lambda.column(0).into_owned();
    let a0 = lambda.column(1).into_owned();
    let am1 = lambda.column(2).into_owned();
    let u = &a1 + &a0 * rho + &am1 * (rho * rho);
    let w0 = &a1 * rho + &a0 + &am1 * rho;
    let v = &a1 * (rho * rho) + &a0 * rho + &am1;
    (u, w0, v)
}

/// Latent-signal part of the closed-form lags (no observation noise) for an
/// order-1 latent with stationary variance `s`. Shared by the public
/// covariance route and the moment-matching objectives.
pub(crate) fn ar1_latent_lags(rho: f64, s: f64, lambda: &DMatrix<f64>, max_lag: usize) -> Vec<DMatrix<f64>> {
    let a1 = lambda.column(0).into_owned();
    let a0 = lambda.column(1).into_owned();
    let am1 = lambda.column(2).into_owned();
    let (u, w0, v) = factor_vectors(rho, lambda);

    let mut lags = Vec::with_capacity(max_lag + 1);
    let mut c0 = (linalg::outer(&a1, &u) + linalg::outer(&a0, &w0) + linalg::outer(&am1, &v)) * s;
    linalg::symmetrize(&mut c0);
    lags.push(c0);
    if max_lag >= 1 {
        let c1 = (linalg::outer(&a1, &w0) + linalg::outer(&a0, &v) + linalg::outer(&am1, &v) * rho) * s;
        lags.push(c1);
    }
    if max_lag >= 2 {
        lags.push(linalg::outer(&u, &v) * s);
        for k in 3..=max_lag {
            let prev = &lags[k - 1];
            lags.push(prev * rho);
        }
    }
    lags
}

/// Latent-signal lags for an order-2 latent with unit stationary variance,
/// through the stationary augmented-state identity.
pub(crate) fn ar2_latent_lags(
    rho1: f64,
    rho2: f64,
    sigma: f64,
    lambda: &DMatrix<f64>,
    max_lag: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let a = DMatrix::from_row_slice(3, 3, &[rho1, rho2, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let mut q = DMatrix::zeros(3, 3);
    q[(0, 0)] = sigma * sigma;
    let pinf = linalg::solve_discrete_lyapunov(&a, &q, 1e-14)?;
    let mut lags = Vec::with_capacity(max_lag + 1);
    let mut right = pinf;
    let a_t = a.transpose();
    for _ in 0..=max_lag {
        lags.push(lambda * &right * lambda.transpose());
        right *= &a_t;
    }
    Ok(lags)
}

/// Closed-form lagged covariances for the AR(1) latent.
///
/// Lag 0 and lag 1 are the explicit three-term outer-product sums; lags two
/// and beyond follow the rank-one geometric tail and are generated by exact
/// scalar recursion `C_{k+1} = rho C_k`, so that identity holds bit-exactly
/// in the output.
pub fn theoretical_cov_closed(params: &ModelParams, max_lag: usize) -> Result<CovSet> {
    let (rho, _sigma) = match params.latent {
        LatentSpec::Ar1 { rho, sigma } => (rho, sigma),
        LatentSpec::Ar2 { .. } => {
            return Err(WindError::invalid_params(
                "closed-form covariances require an order-1 latent; use the state-space route",
            ))
        }
    };
    params.check_usable()?;
    let s = params.latent.stationary_variance()?;
    let lambda = params.realize_loading()?;
    let gamma = params.realize_noise()?;

    let mut lags = ar1_latent_lags(rho, s, &lambda, max_lag);
    lags[0] += gamma;
    linalg::symmetrize(&mut lags[0]);
    CovSet::new(lags, CovSource::Theoretical)
}

/// Lagged covariances through the stationary state-space identity
/// `C_k = H Pinf (A^T)^k H^T + Gamma 1{k=0}`, with `Pinf` solving the
/// discrete Lyapunov equation of the augmented chain. Valid for both latent
/// orders.
pub fn theoretical_cov_ss(params: &ModelParams, max_lag: usize) -> Result<CovSet> {
    params.check_usable()?;
    let ssm = kalman::build_state_space(params)?;
    let gamma = params.realize_noise()?;
    let h = &ssm.obs_map;
    let pinf = &ssm.init_cov;

    let mut lags = Vec::with_capacity(max_lag + 1);
    // Running product Pinf (A^T)^k.
    let mut right = pinf.clone();
    let a_t = ssm.transition.transpose();
    for k in 0..=max_lag {
        let mut c = h * &right * h.transpose();
        if k == 0 {
            c += &gamma;
            linalg::symmetrize(&mut c);
        }
        lags.push(c);
        right *= &a_t;
    }
    CovSet::new(lags, CovSource::Theoretical)
}

/// Empirical lagged covariances of a centered panel.
///
/// Lag-k cross products are pooled over replicates and valid times and
/// divided by the number of summed terms `R (T - k)`; the panel is assumed
/// centered, so no mean is subtracted.
pub fn empirical_cov(panel: &Panel, max_lag: usize) -> Result<CovSet> {
    panel.require_stage(Stage::TransformedCentered)?;
    let t_len = panel.t_len();
    if t_len <= max_lag {
        return Err(WindError::invalid_data(format!(
            "panel length {t_len} cannot support lag {max_lag}"
        )));
    }
    let k = panel.k();
    let mut lags = Vec::with_capacity(max_lag + 1);
    for lag in 0..=max_lag {
        let n_terms = panel.n_replicates() * (t_len - lag);
        let mut sum = DMatrix::zeros(k, k);
        for rep in panel.replicates() {
            let head = rep.rows(0, t_len - lag);
            let tail = rep.rows(lag, t_len - lag);
            sum += head.transpose() * tail;
        }
        let mut c = sum / n_terms as f64;
        if lag == 0 {
            linalg::symmetrize(&mut c);
        }
        lags.push(c);
    }
    CovSet::new(lags, CovSource::Empirical)
}

/// Structural diagnostics of a covariance set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// `||C_1 - C_1^T|| / ||C_1||`: zero only under full symmetry.
    pub asymmetry: f64,
    /// Second singular value of `C_2` relative to the first: near zero when
    /// the lag-2 covariance is rank one as the model implies.
    pub rank1_ratio: f64,
    /// Estimated geometric decay rate of the covariance tail (median of
    /// elementwise `C_3 / C_2` ratios over well-conditioned entries).
    pub decay_rate: f64,
    /// `max_{k>=2} || C_k - decay^{k-2} C_2 ||`.
    pub max_decay_residual: f64,
}

/// Median of elementwise `C_3/C_2` ratios, excluding entries of `C_2` below
/// `1e-6 ||C_2||_max` in magnitude.
fn median_decay_ratio(c2: &DMatrix<f64>, c3: &DMatrix<f64>) -> Option<f64> {
    let c2max = c2.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut ratios: Vec<f64> = c2
        .iter()
        .zip(c3.iter())
        .filter(|(den, _)| den.abs() >= 1e-6 * c2max)
        .map(|(den, num)| num / den)
        .collect();
    if ratios.is_empty() {
        return None;
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = ratios.len();
    Some(if n % 2 == 1 { ratios[n / 2] } else { 0.5 * (ratios[n / 2 - 1] + ratios[n / 2]) })
}

pub fn symmetry_diagnostics(cov: &CovSet) -> Result<DiagnosticsReport> {
    if cov.max_lag() < 2 {
        return Err(WindError::invalid_data("diagnostics need lags up to 2"));
    }
    let c1 = cov.lag(1);
    let c1_norm = linalg::frobenius_norm(c1);
    let asymmetry = if c1_norm > 0.0 {
        linalg::frobenius_dist(c1, &c1.transpose()) / c1_norm
    } else {
        0.0
    };

    let sv = linalg::singular_values(cov.lag(2));
    let rank1_ratio = if sv[0] > 0.0 { sv[1] / sv[0] } else { 0.0 };

    let decay_rate = if cov.max_lag() >= 3 {
        median_decay_ratio(cov.lag(2), cov.lag(3)).unwrap_or(0.0)
    } else {
        0.0
    };
    let mut max_decay_residual = 0.0f64;
    let mut scale = DMatrix::identity(cov.k(), cov.k());
    for k in 2..=cov.max_lag() {
        let predicted = cov.lag(2) * &scale;
        max_decay_residual = max_decay_residual.max(linalg::frobenius_dist(cov.lag(k), &predicted));
        scale *= decay_rate;
    }

    Ok(DiagnosticsReport { asymmetry, rank1_ratio, decay_rate, max_decay_residual })
}

/// One row of a directional cross-correlation table. The site pair is kept
/// for bookkeeping; serialized tables emit only `(dlat, dlon, corr)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DirectionalEntry {
    pub from_site: u32,
    pub to_site: u32,
    pub dlat: f64,
    pub dlon: f64,
    pub corr: f64,
}

/// Lag-k cross-correlations of every ordered site pair against coordinate
/// offsets: `(lat(q) - lat(p), lon(q) - lon(p), corr(Y_t(p), Y_{t+k}(q)))`.
pub fn directional_cross_correlation(panel: &Panel, lag: usize) -> Result<Vec<DirectionalEntry>> {
    let cov = empirical_cov(panel, lag)?;
    let c0 = cov.lag(0);
    let ck = cov.lag(lag);
    let k = panel.k();
    let mut out = Vec::with_capacity(k * (k - 1));
    for p in 0..k {
        for q in 0..k {
            if p == q {
                continue;
            }
            let denom = (c0[(p, p)] * c0[(q, q)]).sqrt();
            if denom <= 0.0 {
                return Err(WindError::invalid_data(format!(
                    "site {} has zero variance",
                    panel.grid.site(p).site_id
                )));
            }
            out.push(DirectionalEntry {
                from_site: panel.grid.site(p).site_id,
                to_site: panel.grid.site(q).site_id,
                dlat: panel.grid.site(q).lat - panel.grid.site(p).lat,
                dlon: panel.grid.site(q).lon - panel.grid.site(p).lon,
                corr: ck[(p, q)] / denom,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SiteGrid;
    use crate::model::{simulate, LoadingSpec, NoiseSpec};
    use crate::testutil::random_params;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closed_form_rho_zero_lag2() {
        // At rho = 0: C_2 = sigma^2 a1 a-1^T.
        let mut p = crate::testutil::small_params(0.0, 1.3);
        p.latent = LatentSpec::Ar1 { rho: 0.0, sigma: 1.3 };
        let cs = theoretical_cov_closed(&p, 2).unwrap();
        let lambda = p.realize_loading().unwrap();
        let expect = linalg::outer(&lambda.column(0).into_owned(), &lambda.column(2).into_owned()) * (1.3 * 1.3);
        assert!(linalg::frobenius_dist(cs.lag(2), &expect) < 1e-14);
    }

    #[test]
    fn zero_loading_degenerates_to_noise() {
        let grid = SiteGrid::demo(1, 3);
        let gamma = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, 0.2, 0.1, 0.2, 1.8]);
        let p = ModelParams {
            latent: LatentSpec::Ar1 { rho: 0.4, sigma: 0.9 },
            loading: LoadingSpec::Full(DMatrix::zeros(3, 3)),
            noise: NoiseSpec::Full(gamma.clone()),
            grid,
        };
        let closed = theoretical_cov_closed(&p, 3).unwrap();
        assert!(linalg::frobenius_dist(closed.lag(0), &gamma) < 1e-15);
        for k in 1..=3 {
            assert!(linalg::frobenius_norm(closed.lag(k)) < 1e-15);
        }
        let ss = theoretical_cov_ss(&p, 3).unwrap();
        assert!(linalg::frobenius_dist(ss.lag(0), &gamma) < 1e-12);
    }

    #[test]
    fn closed_form_matches_state_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..25 {
            let p = random_params(&mut rng, 3, false);
            let closed = theoretical_cov_closed(&p, 5).unwrap();
            let ss = theoretical_cov_ss(&p, 5).unwrap();
            for k in 0..=5 {
                let scale = linalg::frobenius_norm(closed.lag(k)).max(1.0);
                assert!(
                    linalg::frobenius_dist(closed.lag(k), ss.lag(k)) < 1e-12 * scale,
                    "lag {k} mismatch"
                );
            }
        }
    }

    #[test]
    fn geometric_tail_is_exact() {
        let p = crate::testutil::small_params(0.76, 0.8);
        let cs = theoretical_cov_closed(&p, 6).unwrap();
        let rho = 0.76;
        for k in 2..6 {
            let expect = cs.lag(k) * rho;
            // Bit-exact by construction.
            assert_eq!(&expect, cs.lag(k + 1));
        }
    }

    #[test]
    fn ar2_satisfies_yule_walker_recursion() {
        let grid = SiteGrid::demo(1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lambda = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let p = ModelParams {
            latent: LatentSpec::Ar2 { rho1: 0.91, rho2: -0.11, sigma: 0.6 },
            loading: LoadingSpec::Full(lambda),
            noise: NoiseSpec::Full(DMatrix::identity(3, 3)),
            grid,
        };
        let cs = theoretical_cov_ss(&p, 6).unwrap();
        for k in 3..=6 {
            let predicted = cs.lag(k - 1) * 0.91 + cs.lag(k - 2) * (-0.11);
            let scale = linalg::frobenius_norm(cs.lag(k)).max(1e-6);
            assert!(
                linalg::frobenius_dist(cs.lag(k), &predicted) < 1e-12 * scale.max(1.0),
                "lag {k} violates the recursion"
            );
        }
    }

    #[test]
    fn appendix_identity_c2_minus_rho_c1() {
        // Normalized params: C_2 - rho C_1 = (1 - rho^2) a1 a-1^T.
        let p = crate::testutil::small_params(0.6, 1.1).normalize().unwrap();
        let cs = theoretical_cov_closed(&p, 2).unwrap();
        let lambda = p.realize_loading().unwrap();
        let lhs = cs.lag(2) - cs.lag(1) * 0.6;
        let rhs =
            linalg::outer(&lambda.column(0).into_owned(), &lambda.column(2).into_owned()) * (1.0 - 0.36);
        assert!(linalg::frobenius_dist(&lhs, &rhs) < 1e-12);
    }

    #[test]
    fn empirical_iid_panel() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (t_len, reps, k) = (2000, 50, 3);
        let grid = SiteGrid::demo(1, k);
        let values: Vec<DMatrix<f64>> = (0..reps)
            .map(|_| DMatrix::from_fn(t_len, k, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal)))
            .collect();
        let panel = Panel::new(values, grid, Stage::TransformedCentered).unwrap();
        let cs = empirical_cov(&panel, 1).unwrap();
        let se = 1.0 / ((t_len * reps) as f64).sqrt();
        for i in 0..k {
            for j in 0..k {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((cs.lag(0)[(i, j)] - expect).abs() < 4.0 * se * if i == j { 1.5 } else { 1.0 });
                assert!(cs.lag(1)[(i, j)].abs() < 4.0 * se);
            }
        }
    }

    #[test]
    fn empirical_zero_panel_and_lag_guard() {
        let grid = SiteGrid::demo(1, 2);
        let panel = Panel::new(vec![DMatrix::zeros(6, 2)], grid, Stage::TransformedCentered).unwrap();
        let cs = empirical_cov(&panel, 2).unwrap();
        for k in 0..=2 {
            assert_eq!(linalg::frobenius_norm(cs.lag(k)), 0.0);
        }
        assert!(empirical_cov(&panel, 6).is_err());
        assert!(empirical_cov(&panel, 5).is_ok());
    }

    #[test]
    fn empirical_requires_centered_stage() {
        let grid = SiteGrid::demo(1, 2);
        let panel = Panel::new(vec![DMatrix::zeros(6, 2)], grid, Stage::Raw).unwrap();
        assert!(empirical_cov(&panel, 1).is_err());
    }

    #[test]
    fn simulated_covariances_match_theory_within_mc_error() {
        // rho = 0.76, K = 6, T*R = 1e6.
        let grid = SiteGrid::demo(1, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lambda = DMatrix::from_fn(6, 3, |_, _| rng.gen_range(-0.8..0.8));
        let p = ModelParams {
            latent: LatentSpec::Ar1 { rho: 0.76, sigma: 1.0 },
            loading: LoadingSpec::Full(lambda),
            noise: NoiseSpec::Full(DMatrix::identity(6, 6) * 0.4),
            grid,
        }
        .normalize()
        .unwrap();
        let panel = simulate(&p, 10_000, 100, 99).unwrap();
        let emp = empirical_cov(&panel, 3).unwrap();
        let theo = theoretical_cov_closed(&p, 3).unwrap();

        // Conservative MC standard error for each entry: correlated samples
        // inflate the iid rate by roughly (1+rho)/(1-rho).
        let n = (10_000 * 100) as f64;
        let inflate = ((1.0 + 0.76f64) / (1.0 - 0.76)).sqrt();
        for lag in 0..=3 {
            for i in 0..6 {
                for j in 0..6 {
                    let var_i = theo.lag(0)[(i, i)];
                    let var_j = theo.lag(0)[(j, j)];
                    let se = (var_i * var_j / n).sqrt() * inflate;
                    let diff = (emp.lag(lag)[(i, j)] - theo.lag(lag)[(i, j)]).abs();
                    assert!(diff < 3.0 * se, "lag {lag} entry ({i},{j}): diff {diff:.2e} vs se {se:.2e}");
                }
            }
        }
    }

    #[test]
    fn diagnostics_on_theoretical_ar1() {
        let p = crate::testutil::small_params(0.7, 1.0).normalize().unwrap();
        let cs = theoretical_cov_closed(&p, 3).unwrap();
        let d = symmetry_diagnostics(&cs).unwrap();
        assert!(d.rank1_ratio < 1e-12, "rank1 ratio {}", d.rank1_ratio);
        assert!(d.asymmetry > 0.0);
        assert_abs_diff_eq!(d.decay_rate, 0.7, epsilon = 1e-12);
        assert!(d.max_decay_residual < 1e-12);
    }

    #[test]
    fn diagnostics_symmetric_when_only_center_loading() {
        let grid = SiteGrid::demo(1, 3);
        let mut lambda = DMatrix::zeros(3, 3);
        for i in 0..3 {
            lambda[(i, 1)] = 0.5 + 0.3 * i as f64;
        }
        let p = ModelParams {
            latent: LatentSpec::Ar1 { rho: 0.5, sigma: 0.75f64.sqrt() },
            loading: LoadingSpec::Full(lambda),
            noise: NoiseSpec::Full(DMatrix::identity(3, 3)),
            grid,
        };
        let cs = theoretical_cov_closed(&p, 3).unwrap();
        let d = symmetry_diagnostics(&cs).unwrap();
        assert!(d.asymmetry < 1e-12);
        assert!(linalg::frobenius_dist(cs.lag(1), &cs.lag(1).transpose()) < 1e-13);
        assert!(linalg::frobenius_dist(cs.lag(2), &cs.lag(2).transpose()) < 1e-13);
    }

    #[test]
    fn eastward_propagation_shows_in_empirical_asymmetry() {
        // a1 concentrated west, a-1 east: a westward site leads the latent
        // signal, so cov(west_t, east_{t+1}) > cov(east_t, west_{t+1}).
        let grid = SiteGrid::demo(1, 4);
        let mut lambda = DMatrix::zeros(4, 3);
        for i in 0..4 {
            let west = (3 - i) as f64 / 3.0;
            lambda[(i, 0)] = 0.9 * west;
            lambda[(i, 1)] = 0.6;
            lambda[(i, 2)] = 0.9 * (1.0 - west);
        }
        let p = ModelParams {
            latent: LatentSpec::Ar1 { rho: 0.7, sigma: 1.0 },
            loading: LoadingSpec::Full(lambda),
            noise: NoiseSpec::Full(DMatrix::identity(4, 4) * 0.3),
            grid,
        }
        .normalize()
        .unwrap();
        let panel = simulate(&p, 4000, 25, 31).unwrap();
        let emp = empirical_cov(&panel, 2).unwrap();
        let d = symmetry_diagnostics(&emp).unwrap();
        assert!(d.asymmetry > 0.05, "asymmetry {} should be clearly positive", d.asymmetry);
    }

    #[test]
    fn directional_table_lag0_symmetry() {
        let p = crate::testutil::small_params(0.5, 0.9).normalize().unwrap();
        let panel = simulate(&p, 500, 8, 13).unwrap();
        let table = directional_cross_correlation(&panel, 0).unwrap();
        assert_eq!(table.len(), 6);
        for e in &table {
            let mirror = table
                .iter()
                .find(|m| m.from_site == e.to_site && m.to_site == e.from_site)
                .unwrap();
            assert_abs_diff_eq!(e.corr, mirror.corr, epsilon = 1e-12);
            assert_abs_diff_eq!(e.dlat, -mirror.dlat, epsilon = 1e-12);
            assert_abs_diff_eq!(e.dlon, -mirror.dlon, epsilon = 1e-12);
        }
    }

    #[test]
    fn directional_table_detects_westward_loading() {
        let grid = SiteGrid::demo(1, 4);
        let mut lambda = DMatrix::zeros(4, 3);
        for i in 0..4 {
            let west = (3 - i) as f64 / 3.0;
            lambda[(i, 0)] = 0.9 * west;
            lambda[(i, 1)] = 0.6;
            lambda[(i, 2)] = 0.9 * (1.0 - west);
        }
        let p = ModelParams {
            latent: LatentSpec::Ar1 { rho: 0.7, sigma: 1.0 },
            loading: LoadingSpec::Full(lambda),
            noise: NoiseSpec::Full(DMatrix::identity(4, 4) * 0.3),
            grid,
        }
        .normalize()
        .unwrap();
        let panel = simulate(&p, 4000, 25, 37).unwrap();
        let table = directional_cross_correlation(&panel, 1).unwrap();
        let east_mean: f64 = {
            let vals: Vec<f64> = table.iter().filter(|e| e.dlon > 0.0).map(|e| e.corr).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        let west_mean: f64 = {
            let vals: Vec<f64> = table.iter().filter(|e| e.dlon < 0.0).map(|e| e.corr).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        assert!(
            east_mean > west_mean + 0.02,
            "eastward-lagged correlations {east_mean:.3} should exceed westward {west_mean:.3}"
        );
    }

    #[test]
    fn symmetric_loading_directional_table_is_mirror_symmetric() {
        let grid = SiteGrid::demo(1, 3);
        let mut lambda = DMatrix::zeros(3, 3);
        for i in 0..3 {
            lambda[(i, 1)] = 0.7 + 0.1 * i as f64;
        }
        let p = ModelParams {
            latent: LatentSpec::Ar1 { rho: 0.6, sigma: 0.8 },
            loading: LoadingSpec::Full(lambda),
            noise: NoiseSpec::Full(DMatrix::identity(3, 3) * 0.4),
            grid,
        }
        .normalize()
        .unwrap();
        let panel = simulate(&p, 20_000, 25, 41).unwrap();
        let table = directional_cross_correlation(&panel, 1).unwrap();
        for e in &table {
            let mirror = table
                .iter()
                .find(|m| m.from_site == e.to_site && m.to_site == e.from_site)
                .unwrap();
            assert!(
                (e.corr - mirror.corr).abs() < 0.02,
                "mirror pair differs beyond sampling error: {} vs {}",
                e.corr,
                mirror.corr
            );
        }
    }

    #[test]
    fn empirical_converges_to_theoretical_along_seed_ladder() {
        let p = crate::testutil::small_params(0.65, 1.0).normalize().unwrap();
        let theo = theoretical_cov_closed(&p, 3).unwrap();
        let mut last = f64::INFINITY;
        for (t_len, reps) in [(400, 4), (4000, 10), (40_000, 25)] {
            let panel = simulate(&p, t_len, reps, 23).unwrap();
            let emp = empirical_cov(&panel, 3).unwrap();
            let dist: f64 = (0..=3).map(|k| linalg::frobenius_dist(emp.lag(k), theo.lag(k))).sum();
            assert!(dist < last, "distance should shrink with sample size");
            last = dist;
        }
    }
}
