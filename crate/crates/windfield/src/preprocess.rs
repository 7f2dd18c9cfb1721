//! Power-transform pipeline between raw wind speed and the centered
//! Gaussian-scale panel, and its exact inverse for forecast evaluation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WindError};
use crate::model::{Panel, Stage};
use crate::optim::bisect_root;

/// Fitted transform: common power plus per-site means on the transformed
/// scale. Serialized alongside fitted parameters so forecasts can be
/// back-transformed by a separate process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub lambda: f64,
    pub site_ids: Vec<u32>,
    pub site_means: Vec<f64>,
    /// Per-site roots of the asymmetry statistic, kept for reporting; the
    /// common `lambda` is their mean.
    pub per_site_lambda: Vec<f64>,
}

/// Box-Cox power transform of a positive value.
pub fn boxcox(value: f64, lambda: f64) -> Result<f64> {
    if !(value > 0.0) {
        return Err(WindError::invalid_data(format!(
            "power transform requires positive values, got {value}"
        )));
    }
    Ok(if lambda == 0.0 { value.ln() } else { (value.powf(lambda) - 1.0) / lambda })
}

/// Exact inverse of [`boxcox`]. Out-of-domain inputs (where
/// `lambda * value + 1 <= 0`) clamp to speed zero; the caller receives the
/// clamp count through [`inv_boxcox_counted`].
pub fn inv_boxcox(value: f64, lambda: f64) -> f64 {
    inv_boxcox_counted(value, lambda, &mut 0)
}

pub fn inv_boxcox_counted(value: f64, lambda: f64, clamped: &mut usize) -> f64 {
    if lambda == 0.0 {
        return value.exp();
    }
    let base = lambda * value + 1.0;
    if base <= 0.0 {
        *clamped += 1;
        return 0.0;
    }
    base.powf(1.0 / lambda)
}

/// Mean-minus-median asymmetry statistic, standardized by the
/// denominator-n standard deviation.
pub fn hinkley_stat(series: &[f64]) -> Result<f64> {
    if series.len() < 3 {
        return Err(WindError::invalid_data("asymmetry statistic needs at least 3 values"));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(WindError::invalid_data("asymmetry statistic undefined for zero variance"));
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    Ok((mean - median) / var.sqrt())
}

/// Per-site powers and their mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub per_site: Vec<f64>,
    pub mean: f64,
    /// Sites where the asymmetry statistic had no sign change on the search
    /// bracket; the endpoint minimizing |S| was used.
    pub bracket_misses: Vec<u32>,
}

const LAMBDA_BRACKET: (f64, f64) = (0.0, 2.0);
const LAMBDA_TOL: f64 = 1e-4;

/// Choose the common transform power: per site, the root of the asymmetry
/// statistic on `[0, 2]` by bisection, then the unweighted mean over sites.
pub fn select_lambda(panel: &Panel) -> Result<LambdaSelection> {
    panel.require_stage(Stage::Raw)?;
    let k = panel.k();
    let t_len = panel.t_len();
    let n = panel.n_replicates() * t_len;

    let mut per_site = Vec::with_capacity(k);
    let mut bracket_misses = Vec::new();
    for i in 0..k {
        let mut raw = Vec::with_capacity(n);
        for rep in panel.replicates() {
            for t in 0..t_len {
                let v = rep[(t, i)];
                if !(v > 0.0) {
                    return Err(WindError::invalid_data(format!(
                        "site {} has a non-positive value; raw wind speeds required",
                        panel.grid.site(i).site_id
                    )));
                }
                raw.push(v);
            }
        }
        let s_of = |lambda: f64| -> Result<f64> {
            let transformed: Result<Vec<f64>> = raw.iter().map(|&v| boxcox(v, lambda)).collect();
            hinkley_stat(&transformed?)
        };
        // Degenerate series surface here as an error naming the site.
        s_of(1.0).map_err(|e| {
            WindError::invalid_data(format!("site {}: {e}", panel.grid.site(i).site_id))
        })?;
        let root = bisect_root(
            |l| s_of(l).unwrap_or(f64::NAN),
            LAMBDA_BRACKET.0,
            LAMBDA_BRACKET.1,
            LAMBDA_TOL,
            200,
        );
        let lambda_i = match root {
            Ok(l) => l,
            Err(endpoint) => {
                bracket_misses.push(panel.grid.site(i).site_id);
                endpoint
            }
        };
        per_site.push(lambda_i);
    }
    let mean = per_site.iter().sum::<f64>() / k as f64;
    Ok(LambdaSelection { per_site, mean, bracket_misses })
}

/// Apply the power transform entrywise at a common power.
pub fn transform_panel(panel: &Panel, lambda: f64) -> Result<Panel> {
    panel.require_stage(Stage::Raw)?;
    let mut values = Vec::with_capacity(panel.n_replicates());
    for rep in panel.replicates() {
        let mut out = DMatrix::zeros(rep.nrows(), rep.ncols());
        for t in 0..rep.nrows() {
            for i in 0..rep.ncols() {
                out[(t, i)] = boxcox(rep[(t, i)], lambda)?;
            }
        }
        values.push(out);
    }
    // Transformed but not yet centered; Raw tags only untouched wind speed,
    // so the intermediate panel is handled inside this module only.
    panel.with_values(values, Stage::Raw)
}

/// Subtract the per-site mean pooled over replicates and time.
/// The input is the transformed panel produced by [`transform_panel`].
pub fn center(panel: &Panel, lambda: f64) -> Result<(Panel, TransformSpec)> {
    let k = panel.k();
    let t_len = panel.t_len();
    let n = (panel.n_replicates() * t_len) as f64;
    let mut means = vec![0.0; k];
    for rep in panel.replicates() {
        for t in 0..t_len {
            for i in 0..k {
                means[i] += rep[(t, i)];
            }
        }
    }
    for m in means.iter_mut() {
        *m /= n;
    }
    let values = panel
        .replicates()
        .iter()
        .map(|rep| {
            let mut out = rep.clone();
            for t in 0..t_len {
                for i in 0..k {
                    out[(t, i)] -= means[i];
                }
            }
            out
        })
        .collect();
    let centered = panel.with_values(values, Stage::TransformedCentered)?;
    let spec = TransformSpec {
        lambda,
        site_ids: panel.grid.sites().iter().map(|s| s.site_id).collect(),
        site_means: means,
        per_site_lambda: Vec::new(),
    };
    Ok((centered, spec))
}

/// Exact inverse of [`center`]: add the per-site means back.
pub fn add_back(spec: &TransformSpec, panel: &Panel) -> Result<Panel> {
    if spec.site_means.len() != panel.k() {
        return Err(WindError::invalid_data("transform spec does not match panel width"));
    }
    let values = panel
        .replicates()
        .iter()
        .map(|rep| {
            let mut out = rep.clone();
            for t in 0..rep.nrows() {
                for i in 0..rep.ncols() {
                    out[(t, i)] += spec.site_means[i];
                }
            }
            out
        })
        .collect();
    panel.with_values(values, Stage::Raw)
}

/// Full pipeline: select the common power, transform, and center.
pub fn preprocess(panel: &Panel) -> Result<(Panel, TransformSpec)> {
    let selection = select_lambda(panel)?;
    let transformed = transform_panel(panel, selection.mean)?;
    let (centered, mut spec) = center(&transformed, selection.mean)?;
    spec.per_site_lambda = selection.per_site;
    Ok((centered, spec))
}

/// Map a transformed-centered value at a site back to the raw scale.
pub fn back_transform_value(spec: &TransformSpec, site_index: usize, value: f64, clamped: &mut usize) -> f64 {
    inv_boxcox_counted(value + spec.site_means[site_index], spec.lambda, clamped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SiteGrid;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn boxcox_fixed_points_and_branches() {
        assert_abs_diff_eq!(boxcox(1.0, 0.85).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(boxcox(1.0, 0.0).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(boxcox(4.0, 0.5).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(boxcox(std::f64::consts::E, 0.0).unwrap(), 1.0, epsilon = 1e-15);
        assert!(boxcox(0.0, 0.5).is_err());
        assert!(boxcox(-1.0, 0.5).is_err());
    }

    #[test]
    fn boxcox_continuous_in_lambda_at_zero() {
        for y in [0.2, 1.7, 30.0] {
            let log_branch = boxcox(y, 0.0).unwrap();
            let near_zero = boxcox(y, 1e-9).unwrap();
            assert_abs_diff_eq!(log_branch, near_zero, epsilon = 1e-7);
        }
    }

    #[test]
    fn inverse_roundtrip_grid() {
        for &y in &[0.1, 1.0, 30.0] {
            for &l in &[0.0, 0.5, 0.85] {
                let z = boxcox(y, l).unwrap();
                assert_abs_diff_eq!(inv_boxcox(z, l), y, epsilon = 1e-12 * y.max(1.0));
            }
        }
        assert_abs_diff_eq!(inv_boxcox(2.0, 0.5), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn inverse_clamps_out_of_domain() {
        let mut clamped = 0;
        let v = inv_boxcox_counted(-3.0, 0.5, &mut clamped);
        assert_eq!(v, 0.0);
        assert_eq!(clamped, 1);
    }

    #[test]
    fn boxcox_strictly_increasing() {
        for &l in &[0.0, 0.3, 0.85, 1.5] {
            let mut prev = f64::NEG_INFINITY;
            for i in 1..200 {
                let y = 0.05 * i as f64;
                let v = boxcox(y, l).unwrap();
                assert!(v > prev);
                prev = v;
            }
        }
    }

    #[test]
    fn hinkley_hand_values() {
        assert_abs_diff_eq!(hinkley_stat(&[-1.0, 0.0, 1.0]).unwrap(), 0.0, epsilon = 1e-15);
        // mean 1, median 0, denominator-n sd = sqrt(2).
        assert_abs_diff_eq!(
            hinkley_stat(&[0.0, 0.0, 3.0]).unwrap(),
            1.0 / 2.0f64.sqrt(),
            epsilon = 1e-12
        );
        assert!(hinkley_stat(&[1.0, 1.0, 1.0]).is_err());
        assert!(hinkley_stat(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn hinkley_positive_for_lognormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sample: Vec<f64> = (0..20_000).map(|_| rng.sample::<f64, _>(StandardNormal).exp()).collect();
        assert!(hinkley_stat(&sample).unwrap() > 0.3);
    }

    fn synthetic_raw_panel(lambdas: &[f64], seed: u64, t_len: usize, reps: usize) -> Panel {
        // Inverse-transform Gaussian data at the given per-site power; the
        // transformed-scale location keeps raw values positive.
        let k = lambdas.len();
        let grid = SiteGrid::demo(1, k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..reps)
            .map(|_| {
                DMatrix::from_fn(t_len, k, |_, i| {
                    let g: f64 = rng.sample(StandardNormal);
                    let center = boxcox(8.0, lambdas[i]).unwrap();
                    inv_boxcox(center + 0.8 * g, lambdas[i]).max(1e-6)
                })
            })
            .collect();
        Panel::new(values, grid, Stage::Raw).unwrap()
    }

    #[test]
    fn lambda_recovery_near_construction() {
        let panel = synthetic_raw_panel(&[0.85, 0.85, 0.85], 31, 4000, 4);
        let sel = select_lambda(&panel).unwrap();
        assert!(
            (sel.mean - 0.85).abs() < 0.1,
            "recovered lambda {} should be within 0.1 of 0.85",
            sel.mean
        );
    }

    #[test]
    fn lambda_mean_rule_two_sites() {
        let panel = synthetic_raw_panel(&[0.6, 1.0], 17, 6000, 4);
        let sel = select_lambda(&panel).unwrap();
        assert!((sel.per_site[0] - 0.6).abs() < 0.12, "site 0 root {}", sel.per_site[0]);
        assert!((sel.per_site[1] - 1.0).abs() < 0.12, "site 1 root {}", sel.per_site[1]);
        assert!((sel.mean - 0.8).abs() < 0.12, "mean {}", sel.mean);
        // The mean lies inside the per-site range.
        let lo = sel.per_site.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = sel.per_site.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(sel.mean >= lo && sel.mean <= hi);
    }

    #[test]
    fn symmetric_data_selects_identity_like_power() {
        // Symmetric on the raw scale: the root sits near lambda = 1.
        let grid = SiteGrid::demo(1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let values = vec![DMatrix::from_fn(20_000, 1, |_, _| {
            10.0 + 1.5 * rng.sample::<f64, _>(StandardNormal)
        })];
        let panel = Panel::new(values, grid, Stage::Raw).unwrap();
        let sel = select_lambda(&panel).unwrap();
        assert!((sel.per_site[0] - 1.0).abs() < 0.25, "root {}", sel.per_site[0]);
    }

    #[test]
    fn select_lambda_invariant_under_site_reordering() {
        let panel = synthetic_raw_panel(&[0.6, 1.0, 0.8], 13, 2000, 2);
        let sel = select_lambda(&panel).unwrap();
        // Reverse the site order (ids and columns together).
        let grid = SiteGrid::new(panel.grid.sites().iter().rev().cloned().collect()).unwrap();
        let values = panel
            .replicates()
            .iter()
            .map(|rep| {
                DMatrix::from_fn(rep.nrows(), rep.ncols(), |t, i| rep[(t, rep.ncols() - 1 - i)])
            })
            .collect();
        let reversed = Panel::new(values, grid, Stage::Raw).unwrap();
        let sel_rev = select_lambda(&reversed).unwrap();
        assert_abs_diff_eq!(sel.mean, sel_rev.mean, epsilon = 1e-12);
        for (a, b) in sel.per_site.iter().zip(sel_rev.per_site.iter().rev()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn center_and_add_back_roundtrip() {
        let panel = synthetic_raw_panel(&[0.85, 0.7], 5, 200, 3);
        let transformed = transform_panel(&panel, 0.8).unwrap();
        let (centered, spec) = center(&transformed, 0.8).unwrap();

        // Per-site means of the centered panel vanish.
        for i in 0..2 {
            let mut total = 0.0;
            for rep in centered.replicates() {
                total += rep.column(i).sum();
            }
            assert!(total.abs() / (200.0 * 3.0) < 1e-12);
        }
        // Spec means equal pooled means of the transformed panel.
        for i in 0..2 {
            let mut total = 0.0;
            for rep in transformed.replicates() {
                total += rep.column(i).sum();
            }
            assert_abs_diff_eq!(spec.site_means[i], total / 600.0, epsilon = 1e-12);
        }
        let restored = add_back(&spec, &centered).unwrap();
        for (a, b) in restored.replicates().iter().zip(transformed.replicates()) {
            assert!(crate::linalg::frobenius_dist(a, b) < 1e-14 * (a.nrows() as f64));
        }
    }

    #[test]
    fn preprocess_requires_raw_stage() {
        let grid = SiteGrid::demo(1, 2);
        let centered = Panel::new(vec![DMatrix::zeros(8, 2)], grid, Stage::TransformedCentered).unwrap();
        assert!(select_lambda(&centered).is_err());
        assert!(transform_panel(&centered, 0.8).is_err());
    }
}
