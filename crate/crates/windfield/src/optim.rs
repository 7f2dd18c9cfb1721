//! Derivative-free optimizers used by the moment and likelihood fits.
//!
//! The estimation contract only requires monotone descent, bounded budgets,
//! and determinism given a seed, so a compact Nelder-Mead plus 1-D golden
//! section / bisection is all that is needed.

use nalgebra::DVector;
use rand::Rng;

/// Outcome of a simplex run.
#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
    /// Best objective value after each accepted iteration (non-increasing).
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_evaluations: usize,
    /// Stop when the spread of simplex values falls below
    /// `f_tol * (|best| + f_tol)`.
    pub f_tol: f64,
    /// Initial per-coordinate simplex step.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { max_evaluations: 20_000, f_tol: 1e-12, initial_step: 0.1 }
    }
}

/// Standard Nelder-Mead with the usual reflection/expansion/contraction
/// coefficients and best-vertex tracking.
pub fn nelder_mead<F>(f: F, x0: &DVector<f64>, opts: &NelderMeadOptions) -> MinimizeResult
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &DVector<f64>, evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    // Vertices plus values, kept sorted ascending by value.
    let mut simplex: Vec<(DVector<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(x0, &mut evals);
    simplex.push((x0.clone(), v0));
    for i in 0..n {
        let mut xi = x0.clone();
        let step = if xi[i].abs() > 1.0 { opts.initial_step * xi[i].abs() } else { opts.initial_step };
        xi[i] += step;
        let vi = eval(&xi, &mut evals);
        simplex.push((xi, vi));
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());

    let mut trace = vec![simplex[0].1];
    let (alpha, gamma, beta, delta) = (1.0, 2.0, 0.5, 0.5);
    let mut converged = false;

    while evals < opts.max_evaluations {
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if (worst - best).abs() <= opts.f_tol * (best.abs() + opts.f_tol) {
            converged = true;
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = DVector::zeros(n);
        for vert in simplex.iter().take(n) {
            centroid += &vert.0;
        }
        centroid /= n as f64;

        let xr = &centroid + (&centroid - &simplex[n].0) * alpha;
        let fr = eval(&xr, &mut evals);

        if fr < simplex[0].1 {
            let xe = &centroid + (&xr - &centroid) * gamma;
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[n] = (xe, fe);
            } else {
                simplex[n] = (xr, fr);
            }
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            // Contract toward the better of the worst vertex and reflection.
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = &centroid + (&xr - &centroid) * beta;
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = &centroid + (&simplex[n].0 - &centroid) * beta;
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                // Shrink toward the best vertex.
                let x_best = simplex[0].0.clone();
                for vert in simplex.iter_mut().skip(1) {
                    vert.0 = &x_best + (&vert.0 - &x_best) * delta;
                    vert.1 = eval(&vert.0, &mut evals);
                }
            }
        }
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        if simplex[0].1 < *trace.last().unwrap() {
            trace.push(simplex[0].1);
        }
    }

    MinimizeResult {
        x: simplex[0].0.clone(),
        value: simplex[0].1,
        evaluations: evals,
        converged,
        trace,
    }
}

/// Nelder-Mead with `restarts` extra runs from perturbed copies of the best
/// point so far. Deterministic given the RNG state.
pub fn nelder_mead_restarts<F, R>(
    f: F,
    x0: &DVector<f64>,
    opts: &NelderMeadOptions,
    restarts: usize,
    perturbation: f64,
    rng: &mut R,
) -> MinimizeResult
where
    F: Fn(&DVector<f64>) -> f64,
    R: Rng,
{
    let mut best = nelder_mead(&f, x0, opts);
    for _ in 0..restarts {
        let mut start = best.x.clone();
        for v in start.iter_mut() {
            let scale = if v.abs() > 1.0 { perturbation * v.abs() } else { perturbation };
            *v += scale * (2.0 * rng.gen::<f64>() - 1.0);
        }
        let run = nelder_mead(&f, &start, opts);
        let mut trace = best.trace.clone();
        trace.extend(run.trace.iter().copied().filter(|v| *v < best.value));
        if run.value < best.value {
            best = MinimizeResult { trace, evaluations: best.evaluations + run.evaluations, ..run };
        } else {
            best.evaluations += run.evaluations;
        }
    }
    best
}

/// Golden-section maximization of a unimodal-ish function on `[lo, hi]`.
/// Returns the best point found; robust to mild multimodality when the
/// caller seeds a bracketing grid first.
pub fn golden_section_max<F>(f: F, lo: f64, hi: f64, x_tol: f64, max_iter: usize) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    let inv_phi = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..max_iter {
        if (b - a).abs() <= x_tol {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Grid scan followed by golden-section refinement around the best cell.
/// Used for 1-D profile maximizations where unimodality is expected but not
/// proven.
pub fn grid_then_golden_max<F>(f: &F, lo: f64, hi: f64, cells: usize, x_tol: f64) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    let mut best_i = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..=cells {
        let x = lo + (hi - lo) * i as f64 / cells as f64;
        let v = f(x);
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    let a = lo + (hi - lo) * best_i.saturating_sub(1) as f64 / cells as f64;
    let b = lo + (hi - lo) * (best_i + 1).min(cells) as f64 / cells as f64;
    let (x, v) = golden_section_max(f, a, b, x_tol, 200);
    if v >= best_v {
        (x, v)
    } else {
        (lo + (hi - lo) * best_i as f64 / cells as f64, best_v)
    }
}

/// Bisection for a sign change of `f` on `[lo, hi]`.
///
/// Returns `Ok(root)` when `f(lo)` and `f(hi)` differ in sign, otherwise
/// `Err(endpoint)` with the endpoint minimizing `|f|`. Handles either
/// orientation of the sign change.
pub fn bisect_root<F>(f: F, lo: f64, hi: f64, x_tol: f64, max_iter: usize) -> std::result::Result<f64, f64>
where
    F: Fn(f64) -> f64,
{
    let flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(if flo.abs() <= fhi.abs() { lo } else { hi });
    }
    let (mut a, mut b, mut fa) = (lo, hi, flo);
    for _ in 0..max_iter {
        let mid = 0.5 * (a + b);
        let fm = f(mid);
        if fm == 0.0 || (b - a).abs() <= x_tol {
            return Ok(mid);
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}
