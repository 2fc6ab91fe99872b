//! Adaptive composite Simpson quadrature.
//!
//! All mgf and rate-function evaluations in this crate reduce to
//! one-dimensional integrals of smooth (or piecewise-smooth) integrands on
//! finite intervals. Adaptive Simpson with an absolute tolerance is accurate
//! far beyond its error estimate on such integrands, which the d=1
//! one-point/multi-point equivalence checks (agreement to 1e-10) rely on.

/// Default absolute tolerance.
///
/// Tighter than strictly needed for the solvers, but the one-point and
/// multi-point mgf routes must agree to 1e-10 even though they refine the
/// same integrals differently.
pub const DEFAULT_TOL: f64 = 1e-12;

/// Hard cap on subdivision depth: at most 2^20 subintervals.
const MAX_DEPTH: u32 = 20;

/// Levels of unconditional subdivision before error estimates are trusted.
/// Guards against spurious acceptance when the integrand vanishes at the
/// coarse sample points (mass concentrated far from the interval midpoints).
const FORCED_DEPTH: u32 = 3;

/// Adaptive Simpson integral of `f` over `[a, b]` with absolute tolerance `tol`.
///
/// Returns 0 for empty or inverted intervals.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(&f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH, FORCED_DEPTH)
}

/// Adaptive Simpson with forced subdivision points.
///
/// `knots` lists abscissae where the integrand is not smooth (support edges
/// of uniform laws, interpolation break points). Points outside `(a, b)` are
/// ignored; the rest split the integration range so each piece is smooth.
pub fn integrate_with_knots<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    knots: &[f64],
    tol: f64,
) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    let mut cuts: Vec<f64> = knots
        .iter()
        .copied()
        .filter(|&k| k > a && k < b && k.is_finite())
        .collect();
    if cuts.is_empty() {
        return integrate(f, a, b, tol);
    }
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup();
    let piece_tol = tol / (cuts.len() + 1) as f64;
    // Split a hair away from each cut so no piece samples the far side of a
    // jump at its endpoint (Simpson converges miserably against that).
    let nudge = 1e-13 * (b - a);
    let mut lo = a;
    let mut total = 0.0;
    for &c in &cuts {
        total += integrate(&f, lo, c - nudge, piece_tol);
        lo = c + nudge;
    }
    total + integrate(&f, lo, b, piece_tol)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    forced: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    // Overflowed integrands cannot be refined; propagate without recursing.
    if !(left.is_finite() && right.is_finite()) {
        return left + right;
    }
    let delta = left + right - whole;
    // Huge integrands cannot meet an absolute tolerance below their own
    // rounding floor; the relative term keeps the recursion finite there.
    let tol_eff = tol.max(1e-13 * (left + right).abs());
    if depth == 0 || (forced == 0 && delta.abs() <= 15.0 * tol_eff) {
        // Standard Richardson correction for the composite estimate.
        left + right + delta / 15.0
    } else {
        let forced = forced.saturating_sub(1);
        adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, forced)
            + adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, forced)
    }
}

/// Composite Simpson on `n` uniform subintervals (`n` rounded up to even).
///
/// Used where the integrand is only known through grid-resolution data and
/// adaptive refinement would chase interpolation kinks.
pub fn simpson_uniform<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    let n = n.max(2) + n.max(2) % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}
