//! Variational solvers for ruin: the decay rate ρ(t) of the time-dependent
//! ruin probability, the all-time decay ρ* = inf_t ρ(t) with its optimal
//! horizon t*, and most-likely paths.
//!
//! For a terminal set {g(t) ∈ B, f(t) free}, Legendre duality collapses the
//! path problem to a one-dimensional concave maximization: partial
//! minimization over f corresponds to ω = 0 in the dual, and the infimum
//! over g ≥ u of the convex rate sits at g = u, so
//!
//! ```text
//! ρ(t) = sup_θ (θu − N_t(0, θ)).
//! ```
//!
//! The full most likely path is then recovered from two-point cumulants: for
//! each s < t, (f*(s), g*(s)) = ∇_{(ω₁,θ₁)} N_{s,t} at duals ((0, ω*), (0, θ*)).
//! An independent variational solver minimizes the discretized action
//! functional I(f) + I(g|f) directly over pinned-end path grids and serves
//! as the cross-check oracle for the recovery technique.

use rayon::prelude::*;

use crate::mgf::{self, DualVector, TimeGrid};
use crate::model::ModelParams;
use crate::opt;
use crate::ratefn::{self, PathGrid, RateResult};
use crate::{Error, Result};

/// Search horizon for the ruin-time optimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Finite(f64),
    Infinite,
}

/// Shape of the terminal set: ruin (g(t) ≥ u) or a point condition g(t) = a.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TerminalTarget {
    #[default]
    HalfLine,
    Point,
}

/// A ruin or conditioning query.
#[derive(Debug, Clone)]
pub struct RuinQuery {
    /// Initial surplus u (half-line target) or the conditioning value a
    /// (point target), in post-scaling capital units.
    pub level: f64,
    pub horizon: Horizon,
    pub target: TerminalTarget,
    /// Output grid resolution d for recovered paths.
    pub path_resolution: usize,
    /// Coarse scan resolution for the infimum over t.
    pub scan_points: usize,
}

impl RuinQuery {
    /// Ruin query: first passage of the net claims over `u` by time `T`.
    pub fn ruin(u: f64, horizon: Horizon) -> Result<Self> {
        if !(u > 0.0) {
            return Err(Error::InvalidQuery(format!("ruin query needs u > 0, got {u}")));
        }
        if let Horizon::Finite(t) = horizon {
            if !(t > 0.0) {
                return Err(Error::InvalidQuery(format!("horizon must be > 0, got {t}")));
            }
        }
        Ok(RuinQuery {
            level: u,
            horizon,
            target: TerminalTarget::HalfLine,
            path_resolution: 64,
            scan_points: 64,
        })
    }

    /// Point-conditioning query: the net claims attain exactly `a` at `T`.
    pub fn point(a: f64, horizon_t: f64) -> Result<Self> {
        if !(horizon_t > 0.0) {
            return Err(Error::InvalidQuery(format!("horizon must be > 0, got {horizon_t}")));
        }
        Ok(RuinQuery {
            level: a,
            horizon: Horizon::Finite(horizon_t),
            target: TerminalTarget::Point,
            path_resolution: 64,
            scan_points: 64,
        })
    }

    pub fn with_resolution(mut self, d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidQuery(format!("path resolution must be >= 2, got {d}")));
        }
        self.path_resolution = d;
        Ok(self)
    }
}

/// Most likely path to the terminal set, with its dual certificate.
#[derive(Debug, Clone)]
pub struct MostLikelyPath {
    pub path: PathGrid,
    /// Fluid limit f̄ sampled on the same grid.
    pub fluid_f: Vec<f64>,
    /// Fluid limit ḡ sampled on the same grid.
    pub fluid_g: Vec<f64>,
    /// Terminal duals (ω*, θ*) certifying the rate.
    pub omega_star: f64,
    pub theta_star: f64,
    /// ρ(T): the rate of the terminal event.
    pub rate: f64,
}

/// One sample of the ρ(t) curve.
#[derive(Debug, Clone, Copy)]
pub struct DecayCurvePoint {
    pub t: f64,
    pub rate: f64,
}

/// Result of the infimum over horizons.
#[derive(Debug, Clone)]
pub struct DecaySolution {
    /// ρ* with the dual at the optimal horizon.
    pub rate: RateResult,
    /// Optimal horizon t* (ties broken toward the smallest t).
    pub t_star: f64,
    /// The coarse ρ(t) scan, for curve output.
    pub scan: Vec<DecayCurvePoint>,
}

/// ∂N_t(0, θ)/∂θ via central differences with one Richardson step.
fn cumulant_theta_deriv(params: &ModelParams, t: f64, theta: f64) -> Result<f64> {
    let cap = params.theta_max() - 1e-9;
    let h = (1e-3 * (1.0 + theta.abs())).min(((cap - theta) * 0.25).max(1e-12));
    let at = |th: f64| mgf::log_n_one(params, t, 0.0, th);
    let d1 = (at(theta + h)? - at(theta - h)?) / (2.0 * h);
    let d2 = (at(theta + 0.5 * h)? - at(theta - 0.5 * h)?) / h;
    Ok((4.0 * d2 - d1) / 3.0)
}

/// Cheap derivative for bracketing (plain central difference, two cumulant
/// evaluations).
fn cumulant_theta_deriv_coarse(params: &ModelParams, t: f64, theta: f64) -> Result<f64> {
    let cap = params.theta_max() - 1e-9;
    let h = (1e-4 * (1.0 + theta.abs())).min(((cap - theta) * 0.25).max(1e-12));
    let at = |th: f64| mgf::log_n_one(params, t, 0.0, th);
    Ok((at(theta + h)? - at(theta - h)?) / (2.0 * h))
}

/// Find θ* with ∂N_t(0, θ*)/∂θ = target, i.e. the maximizer of
/// θ·target − N_t(0, θ). Returns `None` when the supremum diverges (target
/// unreachable: the dual escapes the norm cap with the slope still positive).
fn terminal_dual(params: &ModelParams, t: f64, target: f64) -> Result<Option<(f64, f64)>> {
    const NORM_CAP: f64 = 1e3;
    let cap = params.theta_max() - 1e-9;
    // ∂N/∂θ explodes to +∞ approaching the abscissa: an overflowed or
    // domain-violating evaluation means the slope is steeply negative there.
    // Bracketing only needs signs, so it runs on the cheap derivative.
    let slope = |theta: f64| -> f64 {
        match cumulant_theta_deriv_coarse(params, t, theta) {
            Ok(d) if d.is_finite() => target - d,
            _ => f64::NEG_INFINITY,
        }
    };

    let s0 = slope(0.0);
    let (mut lo, mut hi);
    if s0 > 0.0 {
        // Search upward toward the mgf abscissa.
        lo = 0.0;
        let mut step = 0.25_f64.min(if cap.is_finite() { cap * 0.25 } else { 0.25 });
        let mut probe = step.min(cap.min(NORM_CAP));
        loop {
            if slope(probe) < 0.0 {
                hi = probe;
                break;
            }
            lo = probe;
            if probe >= cap - 1e-9 || probe >= NORM_CAP {
                // Objective still rising at the cap: +∞.
                return Ok(None);
            }
            step *= 2.0;
            probe = (probe + step).min((cap - 1e-12).min(NORM_CAP));
        }
    } else {
        // Search downward (point targets below the fluid drift).
        hi = 0.0;
        let mut step = 0.25;
        let mut probe = -step;
        loop {
            if slope(probe) > 0.0 {
                lo = probe;
                break;
            }
            hi = probe;
            if probe <= -NORM_CAP {
                return Ok(None);
            }
            step *= 2.0;
            probe = (probe - step).max(-NORM_CAP);
        }
    }
    // The slope is decreasing in θ (N is convex). Illinois false position on
    // the cheap derivative localizes the root; a few secant steps on the
    // Richardson derivative polish it to ~1e-8.
    let coarse = |th: f64| -> f64 {
        match cumulant_theta_deriv_coarse(params, t, th) {
            Ok(d) if d.is_finite() => target - d,
            _ => f64::NEG_INFINITY,
        }
    };
    let mut a = lo;
    let mut b = hi;
    let mut fa = coarse(a);
    let mut fb = coarse(b);
    let mut last_side = 0i8;
    for _ in 0..60 {
        if (b - a).abs() <= 1e-9 * (1.0 + b.abs()) {
            break;
        }
        let mid = if fa.is_finite() && fb.is_finite() && (fb - fa).abs() > 0.0 {
            let fp = (a * fb - b * fa) / (fb - fa);
            if fp > a && fp < b {
                fp
            } else {
                0.5 * (a + b)
            }
        } else {
            0.5 * (a + b)
        };
        let fm = coarse(mid);
        if fm.abs() <= 1e-6 * (1.0 + target.abs()) {
            a = mid;
            b = mid;
            break;
        }
        if fm > 0.0 {
            a = mid;
            fa = fm;
            if last_side == 1 && fb.is_finite() {
                fb *= 0.5; // Illinois trick against one-sided stalling
            }
            last_side = 1;
        } else {
            b = mid;
            fb = fm;
            if last_side == -1 && fa.is_finite() {
                fa *= 0.5;
            }
            last_side = -1;
        }
    }
    let mut theta_star = 0.5 * (a + b);
    // Secant polish on the high-accuracy derivative.
    {
        let fine = |th: f64| -> f64 {
            match cumulant_theta_deriv(params, t, th) {
                Ok(d) if d.is_finite() => target - d,
                _ => f64::NEG_INFINITY,
            }
        };
        let spread = (b - a).abs().max(1e-7 * (1.0 + theta_star.abs()));
        let mut x0 = theta_star - 0.5 * spread;
        let mut x1 = theta_star;
        let mut f0 = fine(x0);
        let mut f1 = fine(x1);
        for _ in 0..4 {
            if !(f0.is_finite() && f1.is_finite()) || (f1 - f0).abs() == 0.0 {
                break;
            }
            let x2 = (x1 - f1 * (x1 - x0) / (f1 - f0)).clamp(lo, hi);
            let f2 = fine(x2);
            x0 = x1;
            f0 = f1;
            x1 = x2;
            f1 = f2;
            if f1.abs() <= 1e-9 * (1.0 + target.abs()) {
                break;
            }
        }
        if f1.is_finite() {
            theta_star = x1;
        }
    }
    let value = theta_star * target - mgf::log_n_one(params, t, 0.0, theta_star)?;
    Ok(Some((theta_star, value)))
}

/// ρ(t): the decay rate of P(ruin by time t) for surplus u, via the
/// contraction to the terminal point and the 1-d dual maximization.
pub fn decay_at_horizon(params: &ModelParams, u: f64, t: f64) -> Result<RateResult> {
    if !(u > 0.0) {
        return Err(Error::InvalidQuery(format!("decay_at_horizon needs u > 0, got {u}")));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidQuery(format!("decay_at_horizon needs t > 0, got {t}")));
    }
    if params.fluid_claims(t) >= u {
        // The fluid path already enters the ruin set: zero rate.
        return Ok(RateResult {
            value: 0.0,
            omega_star: vec![0.0],
            theta_star: vec![0.0],
            converged: true,
            unbounded: false,
            iterations: 0,
            grad_norm: 0.0,
        });
    }
    match terminal_dual(params, t, u)? {
        None => Ok(RateResult {
            value: f64::INFINITY,
            omega_star: vec![0.0],
            theta_star: vec![f64::NAN],
            converged: false,
            unbounded: true,
            iterations: 0,
            grad_norm: f64::NAN,
        }),
        Some((theta_star, value)) => {
            let residual = u - cumulant_theta_deriv(params, t, theta_star)?;
            Ok(RateResult {
                value: value.max(0.0),
                omega_star: vec![0.0],
                theta_star: vec![theta_star],
                converged: residual.abs() <= 1e-6 * (1.0 + u.abs()),
                unbounded: false,
                iterations: 0,
                grad_norm: residual.abs(),
            })
        }
    }
}

/// ρ* = inf over t ∈ (0, T] of ρ(t), with the optimizing horizon t*.
///
/// A coarse scan brackets the minimum (evaluations at distinct t run in
/// parallel), then golden-section refines to 1e-4 relative; flat minima
/// resolve to the smallest t. An infinite horizon scans in blocks until the
/// curve has risen for 8 consecutive nodes past its running minimum and the
/// scan has passed 5× the current argmin.
pub fn decay_rate(params: &ModelParams, u: f64, horizon: Horizon) -> Result<DecaySolution> {
    if !(u > 0.0) {
        return Err(Error::InvalidQuery(format!("decay_rate needs u > 0, got {u}")));
    }
    let mut scan: Vec<DecayCurvePoint> = Vec::new();
    match horizon {
        Horizon::Finite(big_t) => {
            let k = 64;
            let points: Vec<f64> = (1..=k).map(|j| big_t * j as f64 / k as f64).collect();
            let rates: Vec<f64> = points
                .par_iter()
                .map(|&t| decay_at_horizon(params, u, t).map(|r| r.value))
                .collect::<Result<_>>()?;
            for (t, rate) in points.iter().zip(&rates) {
                scan.push(DecayCurvePoint { t: *t, rate: *rate });
            }
        }
        Horizon::Infinite => {
            // Block-wise expanding scan at a sojourn-scaled step.
            let step = (params.sojourn.mean().max(params.residual.mean()).max(0.5)) / 8.0;
            let mut best = f64::INFINITY;
            let mut best_t = 0.0;
            let mut rising = 0usize;
            let mut k = 0usize;
            const BLOCK: usize = 16;
            'outer: loop {
                let ts: Vec<f64> =
                    (k + 1..=k + BLOCK).map(|j| j as f64 * step).collect();
                let rates: Vec<f64> = ts
                    .par_iter()
                    .map(|&t| decay_at_horizon(params, u, t).map(|r| r.value))
                    .collect::<Result<_>>()?;
                for (t, rate) in ts.iter().zip(&rates) {
                    scan.push(DecayCurvePoint { t: *t, rate: *rate });
                    if *rate < best {
                        best = *rate;
                        best_t = *t;
                        rising = 0;
                    } else {
                        rising += 1;
                    }
                    // Stop once the curve has risen for 8 consecutive nodes
                    // past the running minimum; 5× the argmin is the safety
                    // cap for near-flat curves.
                    if best.is_finite() && (rising >= 8 || *t >= 5.0 * best_t) {
                        break 'outer;
                    }
                }
                k += BLOCK;
                if k > 4096 {
                    if !best.is_finite() {
                        // Never reachable: ρ is +∞ everywhere scanned.
                        return Ok(DecaySolution {
                            rate: RateResult {
                                value: f64::INFINITY,
                                omega_star: vec![0.0],
                                theta_star: vec![f64::NAN],
                                converged: false,
                                unbounded: true,
                                iterations: 0,
                                grad_norm: f64::NAN,
                            },
                            t_star: f64::NAN,
                            scan,
                        });
                    }
                    break 'outer;
                }
            }
        }
    }

    // Coarse argmin, ties toward the smallest t.
    let mut idx = 0;
    for (i, p) in scan.iter().enumerate() {
        if p.rate < scan[idx].rate {
            idx = i;
        }
    }
    if !scan[idx].rate.is_finite() {
        return Ok(DecaySolution {
            rate: RateResult {
                value: f64::INFINITY,
                omega_star: vec![0.0],
                theta_star: vec![f64::NAN],
                converged: false,
                unbounded: true,
                iterations: 0,
                grad_norm: f64::NAN,
            },
            t_star: f64::NAN,
            scan,
        });
    }
    let lo = if idx == 0 { scan[0].t * 0.25 } else { scan[idx - 1].t };
    let hi = if idx + 1 < scan.len() { scan[idx + 1].t } else { scan[idx].t };
    let (t_star, _) = opt::golden_section(
        |t| decay_at_horizon(params, u, t).map(|r| r.value).unwrap_or(f64::INFINITY),
        lo,
        hi,
        1e-4,
        200,
    );
    let rate = decay_at_horizon(params, u, t_star)?;
    Ok(DecaySolution { rate, t_star, scan })
}

/// Richardson-extrapolated central difference of a cumulant in one dual
/// coordinate.
fn richardson_deriv<F>(f: F, h: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let d1 = (f(h)? - f(-h)?) / (2.0 * h);
    let d2 = (f(0.5 * h)? - f(-0.5 * h)?) / h;
    Ok((4.0 * d2 - d1) / 3.0)
}

/// Recover the most likely path to a terminal event at time `t` from its
/// terminal duals: for interior s, f*(s) and g*(s) are the ∂/∂ω₁ and ∂/∂θ₁
/// gradients of the two-point cumulant N_{s,t} at ((0, ω*), (0, θ*)).
pub fn recover_path(
    params: &ModelParams,
    t: f64,
    omega_star: f64,
    theta_star: f64,
    d: usize,
) -> Result<MostLikelyPath> {
    if d < 2 {
        return Err(Error::InvalidQuery(format!("path resolution must be >= 2, got {d}")));
    }
    let cap = params.theta_max() - 1e-9;
    if theta_star >= cap {
        return Err(Error::MgfDomain { theta: theta_star, theta_max: params.theta_max() });
    }
    let times: Vec<f64> = (0..=d).map(|j| t * j as f64 / d as f64).collect();

    let interior: Vec<(f64, f64)> = (1..d)
        .into_par_iter()
        .map(|j| -> Result<(f64, f64)> {
            let s = times[j];
            let grid = TimeGrid::new(vec![s, t])?;
            let n_at = |w1: f64, t1: f64| -> Result<f64> {
                let duals = DualVector::new(vec![w1, omega_star], vec![t1, theta_star])?;
                mgf::log_n(params, &grid, &duals)
            };
            let hw = 1e-4;
            let ht = 1e-4_f64.min(((cap - theta_star) * 0.125).max(1e-12));
            let f_s = richardson_deriv(|h| n_at(h, 0.0), hw)?;
            let g_s = richardson_deriv(|h| n_at(0.0, h), ht)?;
            Ok((f_s.max(0.0), g_s))
        })
        .collect::<Result<_>>()?;

    // Endpoints: (f₀, 0) at s = 0; one-point gradients at s = t.
    let hw = 1e-4;
    let ht = 1e-4_f64.min(((cap - theta_star) * 0.125).max(1e-12));
    let f_t = richardson_deriv(
        |h| mgf::log_n_one(params, t, omega_star + h, theta_star),
        hw,
    )?;
    let g_t = richardson_deriv(
        |h| mgf::log_n_one(params, t, omega_star, theta_star + h),
        ht,
    )?;

    let mut f = Vec::with_capacity(d + 1);
    let mut g = Vec::with_capacity(d + 1);
    f.push(params.f0);
    g.push(0.0);
    for &(fs, gs) in &interior {
        f.push(fs);
        g.push(gs);
    }
    f.push(f_t.max(0.0));
    g.push(g_t);

    let rate = (omega_star * f_t + theta_star * g_t
        - mgf::log_n_one(params, t, omega_star, theta_star)?)
    .max(0.0);
    let fluid_f = times.iter().map(|&s| params.fluid_population(s)).collect();
    let fluid_g = times.iter().map(|&s| params.fluid_claims(s)).collect();
    Ok(MostLikelyPath {
        path: PathGrid::new(times, f, g)?,
        fluid_f,
        fluid_g,
        omega_star,
        theta_star,
        rate,
    })
}

/// Most likely path for a query: resolves the terminal duals at the query
/// horizon (ruin level or point value) and runs the gradient recovery.
pub fn most_likely_path(params: &ModelParams, query: &RuinQuery) -> Result<MostLikelyPath> {
    let t = match query.horizon {
        Horizon::Finite(t) => t,
        Horizon::Infinite => decay_rate(params, query.level, Horizon::Infinite)?.t_star,
    };
    if !t.is_finite() {
        return Err(Error::InvalidQuery("no finite optimal horizon: event unreachable".into()));
    }
    let theta_star = match query.target {
        TerminalTarget::HalfLine => {
            let r = decay_at_horizon(params, query.level, t)?;
            if r.unbounded {
                return Err(Error::InvalidQuery("ruin level unreachable: infinite rate".into()));
            }
            r.theta_star[0]
        }
        TerminalTarget::Point => match terminal_dual(params, t, query.level)? {
            Some((theta, _)) => theta,
            None => {
                return Err(Error::InvalidQuery(
                    "point target unreachable: infinite rate".into(),
                ))
            }
        },
    };
    recover_path(params, t, 0.0, theta_star, query.path_resolution)
}

/// Direct variational solver: minimize the discretized action functional
/// I(f) + I(g|f) over paths pinned at f(0) = f₀, g(0) = 0 and g(T) = target
/// (optionally also f(T)), by projected gradient descent with
/// Barzilai-Borwein steps and multi-start. Serves as the independent oracle
/// for [`recover_path`].
pub struct VariationalOutcome {
    pub path: PathGrid,
    pub rate: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn most_likely_path_variational(
    params: &ModelParams,
    t: f64,
    g_target: f64,
    f_target: Option<f64>,
    d: usize,
    warm_start: Option<&PathGrid>,
) -> Result<VariationalOutcome> {
    if !(t > 0.0) || d < 2 {
        return Err(Error::InvalidQuery("variational solver needs t > 0 and d >= 2".into()));
    }
    if params.nu == 0.0 {
        return variational_no_claims(params, t, g_target, d);
    }
    let times: Vec<f64> = (0..=d).map(|j| t * j as f64 / d as f64).collect();

    // Multi-start candidates: the fluid client path with the conditionally
    // optimal claims profile, the fluid path with a linear ramp, and the
    // caller-provided warm start (typically the dual-recovered path).
    let fluid_f: Vec<f64> = times.iter().map(|&s| params.fluid_population(s)).collect();
    let mut starts: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    {
        if let Some(g_opt) = conditional_optimal_g(params, &times, &fluid_f, g_target) {
            starts.push((fluid_f.clone(), g_opt));
        }
        let g_ramp: Vec<f64> = times.iter().map(|&s| g_target * s / t).collect();
        starts.push((fluid_f.clone(), g_ramp));
        if let Some(w) = warm_start {
            if w.len() == d + 1 {
                starts.push((w.f().to_vec(), w.g().to_vec()));
            }
        }
    }

    let mut best: Option<VariationalOutcome> = None;
    for (f0v, g0v) in starts {
        let out = variational_descent(params, &times, f0v, g0v, g_target, f_target)?;
        if best.as_ref().map_or(true, |b| out.rate < b.rate) {
            best = Some(out);
        }
    }
    Ok(best.unwrap())
}

/// Claims profile that minimizes ∫ K_{f}(g′) for a fixed client path and
/// terminal value: the optimal tilt is constant along the path, so the slope
/// is proportional to the local mass, g′(s) = f(s) · g_target / ∫f.
/// `None` when the target is below the premium floor (g′ < −r f somewhere).
fn conditional_optimal_g(
    params: &ModelParams,
    times: &[f64],
    f: &[f64],
    g_target: f64,
) -> Option<Vec<f64>> {
    let n = times.len() - 1;
    let mut mass = 0.0;
    for i in 0..n {
        mass += (times[i + 1] - times[i]) * 0.5 * (f[i] + f[i + 1]);
    }
    if mass <= 1e-12 {
        return None;
    }
    let v = g_target / mass;
    if v <= -params.r + 1e-9 {
        return None;
    }
    let mut g = vec![0.0; n + 1];
    for i in 0..n {
        let x = 0.5 * (f[i] + f[i + 1]);
        g[i + 1] = g[i] + (times[i + 1] - times[i]) * x * v;
    }
    // Pin the terminal exactly (cumulative rounding).
    g[n] = g_target;
    Some(g)
}

/// Objective and analytic gradient of the discretized action functional.
/// The I(f) part differentiates by the envelope theorem through the inner
/// optimizer y*; the K part uses ∂K/∂x = −log φ(θ*), ∂K/∂u = θ*. Returns
/// the inner optimizer for warm-starting the next evaluation.
#[allow(clippy::type_complexity)]
fn action_value_grad(
    params: &ModelParams,
    times: &[f64],
    f: &[f64],
    g: &[f64],
    warm_y: Option<&[f64]>,
) -> Result<Option<(f64, Vec<f64>, Vec<f64>, Vec<f64>)>> {
    let n = times.len() - 1;
    let path = PathGrid::new(times.to_vec(), f.to_vec(), g.to_vec())?;
    let frate = ratefn::rate_f_warm(params, &path, warm_y)?;
    if !frate.value.is_finite() {
        return Ok(None);
    }
    let ystar = &frate.omega_star;
    let w = PathGrid::trapezoid_weights(times);

    let mut grad_f = vec![0.0; n + 1];
    let mut grad_g = vec![0.0; n + 1];
    // d/df of [y_N f(T) − Σ_i w_i y_i (Df)_i] with D the difference scheme.
    grad_f[n] += ystar[n];
    {
        // Transpose application of the derivative stencil.
        let mut coef = vec![0.0; n + 1];
        for i in 0..=n {
            coef[i] = w[i] * ystar[i];
        }
        // Row 0: (f1 − f0)/h0.
        let h0 = times[1] - times[0];
        grad_f[1] -= coef[0] / h0;
        grad_f[0] += coef[0] / h0;
        // Row n: (fn − f_{n−1})/h_{n−1}.
        let hn = times[n] - times[n - 1];
        grad_f[n] -= coef[n] / hn;
        grad_f[n - 1] += coef[n] / hn;
        // Interior rows: (f_{i+1} − f_{i−1})/(t_{i+1} − t_{i−1}).
        for i in 1..n {
            let span = times[i + 1] - times[i - 1];
            grad_f[i + 1] -= coef[i] / span;
            grad_f[i - 1] += coef[i] / span;
        }
    }

    let mut total = frate.value;
    for i in 0..n {
        let h = times[i + 1] - times[i];
        let x = 0.5 * (f[i] + f[i + 1]);
        let u = (g[i + 1] - g[i]) / h;
        let (k, theta) = ratefn::k_local_with_dual(params, x, u)?;
        if !k.is_finite() {
            return Ok(None);
        }
        total += h * k;
        if let Some(theta) = theta {
            let dk_dx = -params.log_phi(theta)?;
            grad_f[i] += 0.5 * h * dk_dx;
            grad_f[i + 1] += 0.5 * h * dk_dx;
            grad_g[i + 1] += theta;
            grad_g[i] -= theta;
        }
    }
    Ok(Some((total, grad_f, grad_g, frate.omega_star)))
}

fn variational_descent(
    params: &ModelParams,
    times: &[f64],
    mut f: Vec<f64>,
    mut g: Vec<f64>,
    g_target: f64,
    f_target: Option<f64>,
) -> Result<VariationalOutcome> {
    let n = times.len() - 1;
    f[0] = params.f0;
    g[0] = 0.0;
    g[n] = g_target;
    if let Some(ft) = f_target {
        f[n] = ft;
    }
    let project = |f: &mut [f64]| {
        for v in f.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    };
    project(&mut f);

    // Nudge interior masses away from 0 so the initial K evaluations are
    // finite when f₀ = 0 (the true optimum has f > 0 in the interior).
    for i in 1..n {
        if f[i] < 1e-6 {
            f[i] = 1e-6;
        }
    }

    let mut state = match action_value_grad(params, times, &f, &g, None)? {
        Some(s) => s,
        None => {
            // Fall back to a feasible interior start: fluid mass with the
            // conditionally optimal claims profile.
            for i in 1..=n {
                f[i] = params.fluid_population(times[i]).max(1e-3);
            }
            if let Some(g_opt) = conditional_optimal_g(params, times, &f, g_target) {
                g = g_opt;
            }
            action_value_grad(params, times, &f, &g, None)?.ok_or_else(|| {
                Error::InvalidQuery("variational solver found no feasible start".into())
            })?
        }
    };

    let mut warm_y: Option<Vec<f64>> = Some(state.3.clone());
    let mut step = 0.1;
    let mut iterations = 0;
    let mut converged = false;
    let mut stall = 0usize;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    for _ in 0..400 {
        iterations += 1;
        let (value, gf, gg) = (state.0, &state.1, &state.2);
        // Project the gradient onto the free coordinates.
        let mut df = gf.clone();
        let mut dg = gg.clone();
        df[0] = 0.0;
        dg[0] = 0.0;
        dg[n] = 0.0;
        if f_target.is_some() {
            df[n] = 0.0;
        }
        // Active-set projection at the f >= 0 boundary.
        for i in 0..=n {
            if f[i] <= 0.0 && df[i] > 0.0 {
                df[i] = 0.0;
            }
        }
        let gnorm2: f64 =
            df.iter().map(|v| v * v).sum::<f64>() + dg.iter().map(|v| v * v).sum::<f64>();
        if gnorm2.sqrt() <= 1e-6 * (1.0 + value.abs()) {
            converged = true;
            break;
        }

        // Barzilai-Borwein step from the previous accepted move.
        if let Some((pdx, pdgrad)) = &prev {
            let sy: f64 = pdx.iter().zip(pdgrad).map(|(a, b)| a * b).sum();
            let yy: f64 = pdgrad.iter().map(|v| v * v).sum();
            if sy > 0.0 && yy > 0.0 {
                step = (sy / yy).clamp(1e-6, 10.0);
            }
        }

        // Backtracking on feasibility and decrease.
        let mut accepted = false;
        let mut trial = step;
        for _ in 0..25 {
            let mut f_new = f.clone();
            let mut g_new = g.clone();
            for i in 0..=n {
                f_new[i] -= trial * df[i];
                g_new[i] -= trial * dg[i];
            }
            project(&mut f_new);
            g_new[0] = 0.0;
            g_new[n] = g_target;
            if let Some(next) = action_value_grad(params, times, &f_new, &g_new, warm_y.as_deref())?
            {
                if next.0 <= value - 1e-10 * trial * gnorm2 {
                    // Record the BB displacement/gradient-change pair.
                    let mut dx: Vec<f64> = Vec::with_capacity(2 * (n + 1));
                    let mut dgrad: Vec<f64> = Vec::with_capacity(2 * (n + 1));
                    for i in 0..=n {
                        dx.push(f_new[i] - f[i]);
                        dgrad.push(next.1[i] - state.1[i]);
                    }
                    for i in 0..=n {
                        dx.push(g_new[i] - g[i]);
                        dgrad.push(next.2[i] - state.2[i]);
                    }
                    prev = Some((dx, dgrad));
                    f = f_new;
                    g = g_new;
                    let improvement = value - next.0;
                    state = next;
                    warm_y = Some(state.3.clone());
                    accepted = true;
                    if improvement <= 1e-9 * (1.0 + value.abs()) {
                        stall += 1;
                    } else {
                        stall = 0;
                    }
                    break;
                }
            }
            trial *= 0.5;
        }
        if !accepted || stall >= 10 {
            // Converged to line-search resolution.
            converged = true;
            break;
        }
    }
    Ok(VariationalOutcome {
        path: PathGrid::new(times.to_vec(), f, g)?,
        rate: state.0,
        iterations,
        converged,
    })
}

/// ν = 0 degenerate case: claims carry no randomness, so g is determined by
/// f (g′ = −r f) and the rate is carried entirely by I(f). Minimizes I(f)
/// subject to the terminal constraint −r ∫ f = g_target.
fn variational_no_claims(
    params: &ModelParams,
    t: f64,
    g_target: f64,
    d: usize,
) -> Result<VariationalOutcome> {
    let times: Vec<f64> = (0..=d).map(|j| t * j as f64 / d as f64).collect();
    let n = d;
    // Midpoint masses: g_{i+1} = g_i − r h (f_i + f_{i+1})/2, so the terminal
    // constraint is c·f = g_target with c from the trapezoid-like weights.
    let mut c = vec![0.0; n + 1];
    for i in 0..n {
        let h = times[i + 1] - times[i];
        c[i] -= 0.5 * params.r * h;
        c[i + 1] -= 0.5 * params.r * h;
    }
    let cc: f64 = c[1..].iter().map(|v| v * v).sum();
    if cc == 0.0 {
        return Err(Error::InvalidQuery("degenerate constraint".into()));
    }

    let mut f: Vec<f64> = times.iter().map(|&s| params.fluid_population(s).max(0.0)).collect();
    f[0] = params.f0;
    let project = |f: &mut Vec<f64>| {
        // Alternate the affine constraint and the positivity box.
        for _ in 0..50 {
            let resid: f64 = g_target - f.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
            let scale = resid / cc;
            for i in 1..=n {
                f[i] += scale * c[i];
            }
            let mut clipped = false;
            for v in f.iter_mut().skip(1) {
                if *v < 0.0 {
                    *v = 0.0;
                    clipped = true;
                }
            }
            if !clipped {
                break;
            }
        }
    };
    project(&mut f);

    let eval = |f: &[f64]| -> Result<(f64, Vec<f64>)> {
        let g = implied_g(params, &times, f);
        let path = PathGrid::new(times.clone(), f.to_vec(), g)?;
        let frate = ratefn::rate_f(params, &path)?;
        let ystar = frate.omega_star;
        let w = PathGrid::trapezoid_weights(&times);
        let mut grad = vec![0.0; n + 1];
        grad[n] += ystar[n];
        let h0 = times[1] - times[0];
        grad[1] -= w[0] * ystar[0] / h0;
        let hn = times[n] - times[n - 1];
        grad[n] -= w[n] * ystar[n] / hn;
        grad[n - 1] += w[n] * ystar[n] / hn;
        for i in 1..n {
            let span = times[i + 1] - times[i - 1];
            grad[i + 1] -= w[i] * ystar[i] / span;
            grad[i - 1] += w[i] * ystar[i] / span;
        }
        Ok((frate.value, grad))
    };

    let (mut value, mut grad) = eval(&f)?;
    let mut iterations = 0;
    let mut converged = false;
    let mut step = 0.1;
    for _ in 0..500 {
        iterations += 1;
        let mut dir = grad.clone();
        dir[0] = 0.0;
        // Project the gradient onto the constraint tangent space.
        let dot: f64 = dir.iter().zip(&c).map(|(a, b)| a * b).sum();
        for i in 1..=n {
            dir[i] -= dot / cc * c[i];
        }
        let gnorm: f64 = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm <= 1e-8 * (1.0 + value.abs()) {
            converged = true;
            break;
        }
        let mut accepted = false;
        let mut trial = step;
        for _ in 0..40 {
            let mut f_new = f.clone();
            for i in 1..=n {
                f_new[i] -= trial * dir[i];
            }
            project(&mut f_new);
            let (v_new, g_new) = eval(&f_new)?;
            if v_new < value {
                f = f_new;
                value = v_new;
                grad = g_new;
                step = (trial * 2.0).min(1.0);
                accepted = true;
                break;
            }
            trial *= 0.5;
        }
        if !accepted {
            converged = true;
            break;
        }
    }
    let g = implied_g(params, &times, &f);
    Ok(VariationalOutcome {
        path: PathGrid::new(times, f, g)?,
        rate: value,
        iterations,
        converged,
    })
}

/// g implied by f when ν = 0: pure premium drain at rate r f.
fn implied_g(params: &ModelParams, times: &[f64], f: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; times.len()];
    for i in 0..times.len() - 1 {
        let h = times[i + 1] - times[i];
        g[i + 1] = g[i] - params.r * h * 0.5 * (f[i] + f[i + 1]);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{bottom_row, top_row};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn decay_tends_to_zero_with_vanishing_surplus() {
        // The infimum over t: a vanishing surplus is crossed immediately at
        // negligible cost (the ruin set touches the fluid start g(0) = 0).
        let p = top_row();
        let sol = decay_rate(&p, 1e-6, Horizon::Finite(2.0)).unwrap();
        assert!(sol.rate.value < 1e-2, "rho* {} for u -> 0", sol.rate.value);
        let coarser = decay_rate(&p, 0.05, Horizon::Finite(2.0)).unwrap();
        assert!(sol.rate.value < coarser.rate.value);
    }

    #[test]
    fn decay_decreases_toward_the_optimal_horizon() {
        let p = top_row();
        let mut prev = f64::INFINITY;
        for t in [0.5, 1.0, 1.5, 2.0, 2.5, 3.0] {
            let rho = decay_at_horizon(&p, 5.0, t).unwrap().value;
            assert!(rho < prev, "rho(t) not decreasing before t*: {rho} at t={t}");
            prev = rho;
        }
    }

    #[test]
    fn decay_zero_when_fluid_already_ruins() {
        // Drift up: νm̄ > r, fluid g reaches small u quickly.
        let p = crate::model::ModelParams::new(
            1.0,
            1.0,
            3.0,
            1.0,
            crate::model::Distribution::exponential(1.5).unwrap(),
            crate::model::Distribution::exponential(1.0).unwrap(),
            crate::model::Distribution::exponential(1.0).unwrap(),
        )
        .unwrap();
        let rho = decay_at_horizon(&p, 0.5, 2.0).unwrap();
        assert_eq!(rho.value, 0.0);
        assert!(rho.converged);
    }

    #[test]
    fn decay_infinite_without_claims() {
        let p = crate::model::ModelParams::new(
            1.0,
            1.0,
            0.0,
            1.0,
            crate::model::Distribution::exponential(1.0).unwrap(),
            crate::model::Distribution::exponential(1.0).unwrap(),
            crate::model::Distribution::exponential(1.0).unwrap(),
        )
        .unwrap();
        let rho = decay_at_horizon(&p, 1.0, 2.0).unwrap();
        assert!(rho.unbounded);
        assert!(rho.value.is_infinite());
    }

    #[test]
    fn lundberg_cross_check_small_surplus() {
        // ρ* = u θ† with log φ(θ†) = 0; top-row θ† = 0.5.
        let p = top_row();
        let sol = decay_rate(&p, 0.5, Horizon::Infinite).unwrap();
        assert_relative_eq!(sol.rate.value, 0.25, epsilon = 5e-3);
    }

    #[test]
    fn recover_path_zero_duals_gives_the_fluid_path() {
        for p in [top_row(), bottom_row()] {
            let mlp = recover_path(&p, 2.0, 0.0, 0.0, 16).unwrap();
            for (j, &s) in mlp.path.times().iter().enumerate() {
                assert_abs_diff_eq!(mlp.path.f()[j], p.fluid_population(s), epsilon = 1e-6);
                assert_abs_diff_eq!(mlp.path.g()[j], p.fluid_claims(s), epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn recovered_ruin_path_is_consistent() {
        // u = 2 has t* ≈ 1.4; T = 0.8 is safely below it, so the conditioned
        // client path must run strictly above the fluid limit.
        let p = top_row();
        let t = 0.8;
        let u = 2.0;
        let rho = decay_at_horizon(&p, u, t).unwrap();
        assert!(rho.converged);
        let mlp = recover_path(&p, t, 0.0, rho.theta_star[0], 24).unwrap();
        // Terminal consistency.
        assert_abs_diff_eq!(mlp.path.g()[24], u, epsilon = 1e-6);
        assert_eq!(mlp.path.g()[0], 0.0);
        assert_eq!(mlp.path.f()[0], p.f0);
        assert_relative_eq!(mlp.rate, rho.value, epsilon = 1e-9);
        // Early ruin needs extra clients: f above fluid in the interior.
        for j in 1..24 {
            assert!(
                mlp.path.f()[j] > mlp.fluid_f[j],
                "f*({}) = {} not above fluid {}",
                mlp.path.times()[j],
                mlp.path.f()[j],
                mlp.fluid_f[j]
            );
        }
    }

    #[test]
    fn variational_matches_dual_recovery() {
        let p = top_row();
        let t = 0.8;
        let u = 2.0;
        let rho = decay_at_horizon(&p, u, t).unwrap();
        let mlp = recover_path(&p, t, 0.0, rho.theta_star[0], 24).unwrap();
        let var =
            most_likely_path_variational(&p, t, u, None, 24, Some(&mlp.path)).unwrap();
        assert_relative_eq!(var.rate, rho.value, epsilon = 0.02);
        let sup: f64 = mlp
            .path
            .f()
            .iter()
            .zip(var.path.f())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = mlp.path.f().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(sup <= 0.05 * scale, "path sup-norm gap {sup} vs scale {scale}");
    }

    #[test]
    fn variational_fluid_target_costs_nothing() {
        let p = top_row();
        let t = 1.0;
        let target = p.fluid_claims(t);
        let var = most_likely_path_variational(&p, t, target, None, 24, None).unwrap();
        assert!(var.rate < 1e-5, "fluid target cost {}", var.rate);
    }

    #[test]
    fn variational_without_claims_drains_premiums() {
        let p = crate::model::ModelParams::new(
            1.0,
            1.0,
            0.0,
            1.0,
            crate::model::Distribution::exponential(1.0).unwrap(),
            crate::model::Distribution::exponential(1.0).unwrap(),
            crate::model::Distribution::exponential(1.0).unwrap(),
        )
        .unwrap();
        // Fluid g(1) = −1·∫f̄ = −1; condition on slightly more drain.
        let var = most_likely_path_variational(&p, 1.0, -1.2, None, 16, None).unwrap();
        // g′ = −r f exactly by construction.
        let times = var.path.times();
        for i in 0..times.len() - 1 {
            let h = times[i + 1] - times[i];
            let u = (var.path.g()[i + 1] - var.path.g()[i]) / h;
            let x = 0.5 * (var.path.f()[i] + var.path.f()[i + 1]);
            assert_abs_diff_eq!(u, -p.r * x, epsilon = 1e-9);
        }
        assert!(var.rate > 1e-3, "conditioning off the fluid must cost");
        let g_rate = ratefn::rate_g_given_f(&p, &var.path).unwrap();
        assert_eq!(g_rate, 0.0, "rate must be carried entirely by I(f)");
    }
}
