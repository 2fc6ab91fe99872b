//! Small optimization toolbox shared by the Legendre-transform and
//! variational solvers: safeguarded 1-d root finding, golden-section
//! minimization, and a damped Newton ascent for smooth concave objectives.

use nalgebra::{Cholesky, DMatrix, DVector};

/// Outcome of a 1-d root search on a bracketing interval.
#[derive(Debug, Clone, Copy)]
pub struct Root {
    pub x: f64,
    pub fx: f64,
    pub iterations: usize,
}

/// Bisection for a continuous function with f(lo) and f(hi) of opposite sign.
/// Runs until the interval or |f| is below tolerance.
pub fn bisect<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    xtol: f64,
    ftol: f64,
    max_iter: usize,
) -> Root {
    let mut flo = f(lo);
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.abs() <= ftol || (hi - lo).abs() <= xtol {
            return Root { x: mid, fx: fm, iterations };
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    let fx = f(x);
    Root { x, fx, iterations }
}

const INV_GOLDEN: f64 = 0.618_033_988_749_894_9; // (√5 − 1)/2

/// Golden-section minimization of `f` on `[a, b]` to relative x-tolerance
/// `rel_tol`. Ties resolve toward the smaller abscissa.
pub fn golden_section<F: FnMut(f64) -> f64>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    rel_tol: f64,
    max_iter: usize,
) -> (f64, f64) {
    let mut c = b - INV_GOLDEN * (b - a);
    let mut d = a + INV_GOLDEN * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..max_iter {
        if (b - a).abs() <= rel_tol * (a.abs() + b.abs()).max(1e-12) {
            break;
        }
        // `<=` keeps the left subinterval on ties: flat minima resolve to the
        // smallest abscissa.
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_GOLDEN * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Diagnostics of a Newton ascent run.
#[derive(Debug, Clone)]
pub struct AscentOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The iterate escaped the norm cap with the objective still rising:
    /// the supremum diverges along a ray.
    pub unbounded: bool,
}

/// Configuration for [`newton_ascent`].
#[derive(Debug, Clone, Copy)]
pub struct AscentConfig {
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Iterate norm beyond which a still-increasing objective is reported as
    /// an unbounded supremum.
    pub norm_cap: f64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        AscentConfig { grad_tol: 1e-7, max_iter: 200, norm_cap: 1e3 }
    }
}

/// Damped Newton ascent of a smooth concave objective.
///
/// `eval` returns the objective value, gradient and Hessian at a point, or
/// `None` outside the domain (the line search then backtracks). Steps solve
/// (−H + γI) p = ∇ with Levenberg damping γ grown until the solve succeeds,
/// then backtrack on an Armijo condition. Falls back to a gradient step when
/// the Newton direction is not an ascent direction.
pub fn newton_ascent<E>(mut eval: E, x0: &[f64], cfg: AscentConfig) -> AscentOutcome
where
    E: FnMut(&[f64]) -> Option<(f64, Vec<f64>, DMatrix<f64>)>,
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut value, mut grad, mut hess) = match eval(x.as_slice()) {
        Some(v) => v,
        None => {
            return AscentOutcome {
                x: x0.to_vec(),
                value: f64::NEG_INFINITY,
                grad_norm: f64::INFINITY,
                iterations: 0,
                converged: false,
                unbounded: false,
            }
        }
    };
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        let g = DVector::from_column_slice(&grad);
        let gnorm = g.norm();
        if gnorm <= cfg.grad_tol {
            return AscentOutcome {
                x: x.as_slice().to_vec(),
                value,
                grad_norm: gnorm,
                iterations,
                converged: true,
                unbounded: false,
            };
        }
        if x.norm() > cfg.norm_cap {
            return AscentOutcome {
                x: x.as_slice().to_vec(),
                value,
                grad_norm: gnorm,
                iterations,
                converged: false,
                unbounded: true,
            };
        }
        iterations += 1;

        // Newton direction on the negated (convex) Hessian, with damping.
        let mut dir: Option<DVector<f64>> = None;
        let mut damping = 0.0;
        let scale = hess.diagonal().amax().max(1e-12);
        for _ in 0..60 {
            let mut m = -&hess;
            for i in 0..n {
                m[(i, i)] += damping;
            }
            if let Some(ch) = Cholesky::new(m) {
                let d = ch.solve(&g);
                if d.dot(&g) > 0.0 {
                    dir = Some(d);
                    break;
                }
            }
            damping = if damping == 0.0 { 1e-8 * scale } else { damping * 10.0 };
        }
        let dir = dir.unwrap_or_else(|| g.clone() / gnorm.max(1.0));

        // Backtracking line search (Armijo).
        let slope = dir.dot(&g);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &x + &dir * step;
            if let Some((v, gr, h)) = eval(cand.as_slice()) {
                if v >= value + 1e-4 * step * slope {
                    x = cand;
                    value = v;
                    grad = gr;
                    hess = h;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            // No admissible ascent step: stationary to line-search resolution.
            return AscentOutcome {
                x: x.as_slice().to_vec(),
                value,
                grad_norm: gnorm,
                iterations,
                converged: gnorm <= cfg.grad_tol * 10.0,
                unbounded: false,
            };
        }
    }
    let gnorm = DVector::from_column_slice(&grad).norm();
    AscentOutcome {
        x: x.as_slice().to_vec(),
        value,
        grad_norm: gnorm,
        iterations,
        converged: false,
        unbounded: x.norm() > cfg.norm_cap,
    }
}

/// Expand a bracket for a decreasing-derivative (concave) objective: find
/// `hi` with f'(hi) < 0 starting from `lo` where f'(lo) > 0, doubling the
/// step but never crossing `limit`. Returns `None` when the derivative is
/// still positive at the limit.
pub fn expand_bracket_decreasing<F: FnMut(f64) -> f64>(
    mut deriv: F,
    lo: f64,
    limit: f64,
    initial_step: f64,
) -> Option<(f64, f64)> {
    let mut step = initial_step;
    let mut a = lo;
    for _ in 0..200 {
        let b = (a + step).min(limit);
        if deriv(b) < 0.0 {
            return Some((a, b));
        }
        if b >= limit {
            return None;
        }
        a = b;
        step *= 2.0;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bisect_finds_sqrt2() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14, 0.0, 200);
        assert_abs_diff_eq!(r.x, std::f64::consts::SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn golden_finds_parabola_min() {
        let (x, v) = golden_section(|x| (x - 1.3) * (x - 1.3) + 0.5, -4.0, 6.0, 1e-10, 500);
        assert_abs_diff_eq!(x, 1.3, epsilon = 1e-6);
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn golden_flat_region_prefers_left() {
        // Flat on [1, 3]: must land at (or near) the left edge.
        let f = |x: f64| if x < 1.0 { 1.0 - x } else if x > 3.0 { x - 3.0 } else { 0.0 };
        let (x, _) = golden_section(f, 0.0, 4.0, 1e-10, 500);
        assert!(x <= 1.0 + 1e-4, "tie should break left, got {x}");
    }

    #[test]
    fn newton_ascent_quadratic() {
        // Maximize −(x−2)² − 2(y+1)².
        let eval = |p: &[f64]| {
            let (x, y) = (p[0], p[1]);
            let v = -(x - 2.0).powi(2) - 2.0 * (y + 1.0).powi(2);
            let g = vec![-2.0 * (x - 2.0), -4.0 * (y + 1.0)];
            let h = DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, -4.0]);
            Some((v, g, h))
        };
        let out = newton_ascent(eval, &[0.0, 0.0], AscentConfig::default());
        assert!(out.converged);
        assert_abs_diff_eq!(out.x[0], 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(out.x[1], -1.0, epsilon = 1e-8);
    }

    #[test]
    fn newton_ascent_detects_unbounded() {
        // Maximize x: no finite supremum.
        let eval = |p: &[f64]| {
            let h = DMatrix::from_row_slice(1, 1, &[0.0]);
            Some((p[0], vec![1.0], h))
        };
        let out = newton_ascent(eval, &[0.0], AscentConfig { norm_cap: 50.0, ..Default::default() });
        assert!(out.unbounded);
    }
}
