//! Legendre transforms: one-point and multi-point rate functions, the local
//! increment cost K, and the decomposed sample-path action functional
//! I(f, g) = I(f) + I(g | f).
//!
//! All rate functions are suprema of concave dual objectives of the form
//! `⟨dual, target⟩ − N(dual)` with N a joint cumulant from [`crate::mgf`].
//! They are solved by damped Newton ascent with finite-difference gradients;
//! divergence along a ray (the target outside the closure of the reachable
//! domain) is detected by the iterate norm escaping a cap while the
//! objective still rises, and is reported as an infinite rate rather than as
//! non-convergence.

use nalgebra::DMatrix;

use crate::mgf::{self, DualVector, TimeGrid};
use crate::model::ModelParams;
use crate::opt::{self, AscentConfig};
use crate::{Error, Result};

/// A rate-function value with its optimizing duals and solver diagnostics.
#[derive(Debug, Clone)]
pub struct RateResult {
    /// Rate in nats per unit of the scaling parameter; +∞ when `unbounded`.
    pub value: f64,
    /// Optimizing ω duals (for [`rate_f`]: the optimal log z grid values).
    pub omega_star: Vec<f64>,
    /// Optimizing θ duals.
    pub theta_star: Vec<f64>,
    pub converged: bool,
    /// The supremum diverges along a ray: the target is outside the closure
    /// of the reachable domain.
    pub unbounded: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl RateResult {
    fn from_outcome(out: opt::AscentOutcome, split: usize) -> Self {
        let (omega_star, theta_star) = {
            let (w, t) = out.x.split_at(split);
            (w.to_vec(), t.to_vec())
        };
        RateResult {
            value: if out.unbounded { f64::INFINITY } else { out.value.max(0.0) },
            omega_star,
            theta_star,
            converged: out.converged,
            unbounded: out.unbounded,
            iterations: out.iterations,
            grad_norm: out.grad_norm,
        }
    }
}

/// A candidate or recovered sample path: times (starting at 0) with paired
/// client-mass and net-claims values. Jumps are not representable; paths are
/// the piecewise-linear interpolants of the grid values.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGrid {
    times: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
}

impl PathGrid {
    pub fn new(times: Vec<f64>, f: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times.len() != f.len() || times.len() != g.len() {
            return Err(Error::InvalidGrid(
                "path grid needs >= 2 nodes with matching value lengths".into(),
            ));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidGrid("path grid must start at time 0".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("path times must be strictly increasing".into()));
        }
        if f.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidGrid("client-mass values must be finite and >= 0".into()));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid("net-claims values must be finite".into()));
        }
        Ok(PathGrid { times, f, g })
    }

    /// Uniform grid sampling of two functions on [0, T].
    pub fn from_fns<F, G>(horizon: f64, intervals: usize, f: F, g: G) -> Result<Self>
    where
        F: Fn(f64) -> f64,
        G: Fn(f64) -> f64,
    {
        let n = intervals.max(2);
        let times: Vec<f64> = (0..=n).map(|i| horizon * i as f64 / n as f64).collect();
        let fv = times.iter().map(|&t| f(t)).collect();
        let gv = times.iter().map(|&t| g(t)).collect();
        Self::new(times, fv, gv)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Central differences in the interior, one-sided at the ends.
    pub fn derivatives(values: &[f64], times: &[f64]) -> Vec<f64> {
        let n = values.len();
        let mut d = vec![0.0; n];
        d[0] = (values[1] - values[0]) / (times[1] - times[0]);
        d[n - 1] = (values[n - 1] - values[n - 2]) / (times[n - 1] - times[n - 2]);
        for i in 1..n - 1 {
            d[i] = (values[i + 1] - values[i - 1]) / (times[i + 1] - times[i - 1]);
        }
        d
    }

    /// Trapezoid weights of the grid.
    pub(crate) fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
        let n = times.len();
        let mut w = vec![0.0; n];
        for i in 0..n - 1 {
            let h = times[i + 1] - times[i];
            w[i] += 0.5 * h;
            w[i + 1] += 0.5 * h;
        }
        w
    }
}

/// Central-difference value/gradient/Hessian of a black-box objective.
/// Returns `None` when any stencil point is outside the domain.
fn fd_value_grad_hess<F>(f: &F, x: &[f64], steps: &[f64]) -> Option<(f64, Vec<f64>, DMatrix<f64>)>
where
    F: Fn(&[f64]) -> Option<f64>,
{
    let n = x.len();
    let value = f(x)?;
    let mut probe = x.to_vec();
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    for i in 0..n {
        probe[i] = x[i] + steps[i];
        plus[i] = f(&probe)?;
        probe[i] = x[i] - steps[i];
        minus[i] = f(&probe)?;
        probe[i] = x[i];
    }
    let mut grad = vec![0.0; n];
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        grad[i] = (plus[i] - minus[i]) / (2.0 * steps[i]);
        hess[(i, i)] = (plus[i] - 2.0 * value + minus[i]) / (steps[i] * steps[i]);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let mut at = |si: f64, sj: f64| {
                probe[i] = x[i] + si;
                probe[j] = x[j] + sj;
                let v = f(&probe);
                probe[i] = x[i];
                probe[j] = x[j];
                v
            };
            let pp = at(steps[i], steps[j])?;
            let pm = at(steps[i], -steps[j])?;
            let mp = at(-steps[i], steps[j])?;
            let mm = at(-steps[i], -steps[j])?;
            let v = (pp - pm - mp + mm) / (4.0 * steps[i] * steps[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Some((value, grad, hess))
}

/// Relative finite-difference step for the dual ascents.
const FD_STEP: f64 = 1e-4;

/// One-point rate function I_t(f, g) = sup_{ω,θ} (ωf + θg − N_t(ω, θ)).
pub fn rate_one_point(params: &ModelParams, t: f64, f: f64, g: f64) -> Result<RateResult> {
    if !(t > 0.0) {
        return Err(Error::InvalidQuery(format!("rate_one_point needs t > 0, got {t}")));
    }
    if !(f >= 0.0) {
        return Err(Error::InvalidQuery(format!("client mass must be >= 0, got {f}")));
    }
    let theta_cap = params.theta_max() - 1e-9;
    let objective = move |x: &[f64]| -> Option<f64> {
        let (omega, theta) = (x[0], x[1]);
        if theta >= theta_cap {
            return None;
        }
        let n = mgf::log_n_one(params, t, omega, theta).ok()?;
        let v = omega * f + theta * g - n;
        v.is_finite().then_some(v)
    };
    let eval = |x: &[f64]| {
        let hw = FD_STEP * (1.0 + x[0].abs());
        let ht = (FD_STEP * (1.0 + x[1].abs())).min(((theta_cap - x[1]) * 0.25).max(1e-12));
        fd_value_grad_hess(&objective, x, &[hw, ht])
    };
    let out = opt::newton_ascent(eval, &[0.0, 0.0], AscentConfig::default());
    Ok(RateResult::from_outcome(out, 1))
}

/// Multi-point rate function: sup over 2d duals of Σωf + Σθg − N(ω, θ).
pub fn rate_multi(
    params: &ModelParams,
    grid: &TimeGrid,
    fs: &[f64],
    gs: &[f64],
) -> Result<RateResult> {
    let d = grid.len();
    if fs.len() != d || gs.len() != d {
        return Err(Error::InvalidGrid("target lengths must match the grid".into()));
    }
    if fs.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidQuery("client-mass targets must be >= 0".into()));
    }
    let theta_cap = params.theta_max() - 1e-9;
    let objective = move |x: &[f64]| -> Option<f64> {
        let duals = DualVector::new(x[..d].to_vec(), x[d..].to_vec()).ok()?;
        // Suffix sums Θ_k must stay inside the mgf domain.
        let mut suffix = 0.0;
        for k in (0..d).rev() {
            suffix += duals.theta[k];
            if suffix >= theta_cap {
                return None;
            }
        }
        let n = mgf::log_n(params, grid, &duals).ok()?;
        let mut v = -n;
        for k in 0..d {
            v += duals.omega[k] * fs[k] + duals.theta[k] * gs[k];
        }
        v.is_finite().then_some(v)
    };
    let eval = |x: &[f64]| {
        let steps: Vec<f64> = x.iter().map(|xi| FD_STEP * (1.0 + xi.abs())).collect();
        fd_value_grad_hess(&objective, x, &steps)
    };
    let out = opt::newton_ascent(eval, &vec![0.0; 2 * d], AscentConfig::default());
    Ok(RateResult::from_outcome(out, d))
}

/// Which Legendre kernel the local cost uses. `LogPhi` is the consistent
/// reading (zero exactly at the local mean drift); `PhiDisplayed` is kept
/// for diagnostics only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KLocalKernel {
    #[default]
    LogPhi,
    PhiDisplayed,
}

/// Local increment cost K_x(u) = sup_θ (θu − x log φ(θ)): the Cramér cost
/// per unit time of the net claims moving at rate u while the client mass
/// sits at x. Returns +∞ (as a value, not an error) for unreachable rates.
pub fn k_local(params: &ModelParams, x: f64, u: f64) -> Result<f64> {
    k_local_with_dual(params, x, u).map(|(v, _)| v)
}

/// As [`k_local`], also returning the optimizing θ* when the supremum is
/// attained in the interior. There, ∂K/∂u = θ* and ∂K/∂x = −log φ(θ*).
pub fn k_local_with_dual(params: &ModelParams, x: f64, u: f64) -> Result<(f64, Option<f64>)> {
    if !(x >= 0.0) {
        return Err(Error::InvalidQuery(format!("k_local needs x >= 0, got {x}")));
    }
    let scale = 1.0 + x.abs() + u.abs();
    if x == 0.0 {
        // No clients: the claims process cannot move.
        return Ok(if u == 0.0 { (0.0, None) } else { (f64::INFINITY, None) });
    }
    if params.nu == 0.0 {
        // Pure premium drain: u must equal −r x exactly.
        return Ok(if (u + params.r * x).abs() <= 1e-12 * scale {
            (0.0, None)
        } else {
            (f64::INFINITY, None)
        });
    }
    // Interior stationarity: β′(θ*) = (u/x + r)/ν =: target.
    let target = (u / x + params.r) / params.nu;
    if target < 0.0 {
        // u < −r x: claims cannot be negative.
        return Ok((f64::INFINITY, None));
    }
    if target == 0.0 {
        // u = −r x: the boundary value lim_{θ→−∞} of the dual objective.
        return Ok((x * params.nu, None));
    }
    let theta_star = solve_claim_deriv(params, target)?;
    let value = theta_star * u - x * params.log_phi(theta_star)?;
    Ok((value.max(0.0), Some(theta_star)))
}

/// Solve β′(θ) = target on (−∞, θ_max); β′ is increasing with range (0, ∞)
/// for every law in the catalogue.
fn solve_claim_deriv(params: &ModelParams, target: f64) -> Result<f64> {
    let theta_cap = params.claim.theta_max() - 1e-12;
    let deriv = |th: f64| params.claim.mgf_deriv(th).unwrap_or(f64::INFINITY) - target;

    let mut lo = -1.0;
    while deriv(lo) > 0.0 {
        lo *= 2.0;
        if lo < -1e12 {
            return Err(Error::InvalidQuery("claim dual bracket underflow".into()));
        }
    }
    let mut hi = if theta_cap.is_finite() { theta_cap } else { 1.0 };
    if !theta_cap.is_finite() {
        while deriv(hi) < 0.0 {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::InvalidQuery("claim dual bracket overflow".into()));
            }
        }
    }
    let root = opt::bisect(deriv, lo, hi, 1e-14 * (1.0 + hi.abs()), 0.0, 200);
    Ok(root.x)
}

/// Diagnostic variant switch for the local cost kernel.
pub fn k_local_with_kernel(
    params: &ModelParams,
    x: f64,
    u: f64,
    kernel: KLocalKernel,
) -> Result<f64> {
    match kernel {
        KLocalKernel::LogPhi => k_local(params, x, u),
        KLocalKernel::PhiDisplayed => {
            if !(x >= 0.0) {
                return Err(Error::InvalidQuery(format!("k_local needs x >= 0, got {x}")));
            }
            if x == 0.0 {
                return Ok(if u == 0.0 { 0.0 } else { f64::INFINITY });
            }
            // sup_θ (θu − x φ(θ)) by golden section on an expanded bracket.
            let cap = params.theta_max() - 1e-9;
            let obj = |th: f64| match params.phi(th) {
                Ok(p) => th * u - x * p,
                Err(_) => f64::NEG_INFINITY,
            };
            let mut lo = -1.0;
            while obj(2.0 * lo) > obj(lo) && lo > -1e9 {
                lo *= 2.0;
            }
            let mut hi = cap.min(1.0);
            loop {
                let next = if cap.is_finite() { 0.5 * (hi + cap) } else { hi * 2.0 };
                if next > 1e9 || obj(next) <= obj(hi) {
                    break;
                }
                hi = next;
            }
            // Diagnostic value, reported unclamped: with the φ kernel the
            // supremum is negative at the local mean drift, which is exactly
            // why the log φ reading is the consistent one.
            let (_, neg) = opt::golden_section(|th| -obj(th), 2.0 * lo, hi, 1e-12, 500);
            Ok(-neg)
        }
    }
}

/// Marginal action functional of the client-mass path: the supremum over
/// positive grid functions z(·) of the variational form, optimized as
/// y = log z with y(0) = 0 by damped Newton (the objective is concave in y).
///
/// The returned `omega_star` holds the optimal y = log z on the path grid.
pub fn rate_f(params: &ModelParams, fpath: &PathGrid) -> Result<RateResult> {
    rate_f_warm(params, fpath, None)
}

/// As [`rate_f`] with an optional warm start for the inner dual y = log z
/// (the full y vector including the pinned y(0) = 0 node). Outer iterative
/// solvers re-solve I(f) at slowly moving f and converge in a step or two
/// from the previous optimizer.
pub(crate) fn rate_f_warm(
    params: &ModelParams,
    fpath: &PathGrid,
    warm: Option<&[f64]>,
) -> Result<RateResult> {
    if (fpath.f[0] - params.f0).abs() > 1e-9 * (1.0 + params.f0) {
        return Err(Error::InvalidQuery(format!(
            "path must start at f0 = {}, got {}",
            params.f0, fpath.f[0]
        )));
    }
    let times = fpath.times();
    let n = times.len() - 1;
    let big_t = fpath.horizon();
    let w = PathGrid::trapezoid_weights(times);
    let fprime = PathGrid::derivatives(&fpath.f, times);

    // Linear part: y_N f(T) − Σ w_i y_i f′_i.
    let mut lin = vec![0.0; n + 1];
    for i in 0..=n {
        lin[i] -= w[i] * fprime[i];
    }
    lin[n] += fpath.f[n];

    // Exponential terms coef · exp(Σ c_k y_k). Sojourn/residual mass is
    // attributed per grid cell through exact tail differences (point
    // sampling the density would lose O(h) at its jumps), with the weight
    // placed on interpolation hats: cell midpoints for continuous laws, the
    // exact departure position for an atom.
    struct ExpTerm {
        coef: f64,
        nodes: Vec<(usize, f64)>,
    }
    let cell_masses = |law: &crate::model::Distribution, origin: f64, lo_cell: usize| {
        let mut out: Vec<ExpTerm> = Vec::new();
        match law.atom() {
            Some((loc, mass)) => {
                let depart = origin + loc;
                if depart <= big_t {
                    let j = times.iter().position(|&tj| tj >= depart).unwrap_or(n).max(1);
                    let alpha = (depart - times[j - 1]) / (times[j] - times[j - 1]);
                    out.push(ExpTerm {
                        coef: mass,
                        nodes: vec![(j - 1, 1.0 - alpha), (j, alpha)],
                    });
                }
            }
            None => {
                for j in lo_cell..n {
                    let mass = law.tail(times[j] - origin) - law.tail(times[j + 1] - origin);
                    if mass > 0.0 {
                        out.push(ExpTerm { coef: mass, nodes: vec![(j, 0.5), (j + 1, 0.5)] });
                    }
                }
            }
        }
        out
    };

    // Residual-mass terms: S(y) = Σ coef·e^{…} + h̄°(T) e^{y_N}. Normalizing
    // by S(0) makes the discretized functional vanish exactly at y = 0.
    let mut s_terms: Vec<ExpTerm> = Vec::new();
    if params.f0 > 0.0 {
        s_terms = cell_masses(&params.residual, 0.0, 0);
        s_terms.push(ExpTerm { coef: params.residual.tail(big_t), nodes: vec![(n, 1.0)] });
    }
    let s_total: f64 = s_terms.iter().map(|t| t.coef).sum();

    // Arrival-side terms: ∫₀ᵀ [∫ₛᵀ h(r−s) e^{y(r)−y(s)} dr + h̄(T−s) e^{y_N−y(s)}] ds,
    // outer integral by trapezoid over the grid.
    let mut terms: Vec<ExpTerm> = Vec::new();
    for i in 0..=n {
        let tail_coef = w[i] * params.sojourn.tail(big_t - times[i]);
        if tail_coef != 0.0 {
            terms.push(ExpTerm { coef: tail_coef, nodes: vec![(n, 1.0), (i, -1.0)] });
        }
        for mut term in cell_masses(&params.sojourn, times[i], i) {
            term.coef *= w[i];
            term.nodes.push((i, -1.0));
            terms.push(term);
        }
    }
    let z0: f64 = terms.iter().map(|t| t.coef).sum();

    let lambda = params.lambda;
    let f0 = params.f0;
    let eval = |y: &[f64]| -> Option<(f64, Vec<f64>, DMatrix<f64>)> {
        // y holds the free nodes y_1..y_N; y_0 = 0 is pinned.
        let full = |i: usize| if i == 0 { 0.0 } else { y[i - 1] };
        if y.iter().any(|v| v.abs() > 400.0) {
            return None;
        }
        let mut value = 0.0;
        let mut grad = vec![0.0; n];
        let mut hess = DMatrix::zeros(n, n);
        for i in 0..=n {
            value += lin[i] * full(i);
            if i > 0 {
                grad[i - 1] += lin[i];
            }
        }
        if f0 > 0.0 {
            // B(y) = −f₀ ln(S(y)/S(0)): softmax-style gradient and Hessian.
            let mut s = 0.0;
            let mut mean_dir = vec![0.0; n]; // Σ (p_k/S) ∇q_k
            let mut sq: DMatrix<f64> = DMatrix::zeros(n, n); // Σ (p_k/S) ∇q_k ∇q_kᵀ
            let mut weighted: Vec<f64> = Vec::with_capacity(s_terms.len());
            for term in &s_terms {
                let expo: f64 = term.nodes.iter().map(|&(k, c)| c * full(k)).sum();
                let v = term.coef * expo.exp();
                weighted.push(v);
                s += v;
            }
            if !(s > 0.0) || !s.is_finite() {
                return None;
            }
            for (term, &v) in s_terms.iter().zip(&weighted) {
                let p = v / s;
                for &(k, ck) in &term.nodes {
                    if k > 0 {
                        mean_dir[k - 1] += p * ck;
                    }
                }
                for &(k, ck) in &term.nodes {
                    for &(l, cl) in &term.nodes {
                        if k > 0 && l > 0 {
                            sq[(k - 1, l - 1)] += p * ck * cl;
                        }
                    }
                }
            }
            value -= f0 * (s / s_total).ln();
            for i in 0..n {
                grad[i] -= f0 * mean_dir[i];
            }
            for i in 0..n {
                for j in 0..n {
                    hess[(i, j)] -= f0 * (sq[(i, j)] - mean_dir[i] * mean_dir[j]);
                }
            }
        }
        let mut arrivals = 0.0;
        for term in &terms {
            let expo: f64 = term.nodes.iter().map(|&(k, c)| c * full(k)).sum();
            if expo > 500.0 {
                return None;
            }
            let v = term.coef * expo.exp();
            arrivals += v;
            for &(k, ck) in &term.nodes {
                if k > 0 {
                    grad[k - 1] -= lambda * v * ck;
                }
            }
            for &(k, ck) in &term.nodes {
                for &(l, cl) in &term.nodes {
                    if k > 0 && l > 0 {
                        hess[(k - 1, l - 1)] -= lambda * v * ck * cl;
                    }
                }
            }
        }
        value -= lambda * (arrivals - z0);
        value.is_finite().then_some((value, grad, hess))
    };

    let start: Vec<f64> = match warm {
        Some(y) if y.len() == n + 1 => y[1..].to_vec(),
        _ => vec![0.0; n],
    };
    let mut out = opt::newton_ascent(&eval, &start, AscentConfig::default());
    if !out.converged && warm.is_some() {
        // A stale warm start can sit outside the domain; retry cold.
        let cold = opt::newton_ascent(&eval, &vec![0.0; n], AscentConfig::default());
        if cold.value > out.value || cold.converged {
            out = cold;
        }
    }
    let mut y_full = vec![0.0];
    y_full.extend_from_slice(&out.x);
    Ok(RateResult {
        value: if out.unbounded { f64::INFINITY } else { out.value.max(0.0) },
        omega_star: y_full,
        theta_star: Vec::new(),
        converged: out.converged,
        unbounded: out.unbounded,
        iterations: out.iterations,
        grad_norm: out.grad_norm,
    })
}


/// Conditional action functional I(g | f) = ∫₀ᵀ K_{f(s)}(g′(s)) ds,
/// evaluated by the composite midpoint rule: each interval contributes
/// h · K at the midpoint mass with the interval's difference quotient as
/// slope (the central difference at the midpoint). Midpoints keep boundary
/// nodes with f = 0 (e.g. f₀ = 0 starts) out of the kernel argument.
/// Returns +∞ (as a value) when any interval has an unreachable slope.
pub fn rate_g_given_f(params: &ModelParams, path: &PathGrid) -> Result<f64> {
    if path.g[0].abs() > 1e-9 {
        return Err(Error::InvalidQuery(format!(
            "path must start at g(0) = 0, got {}",
            path.g[0]
        )));
    }
    let times = path.times();
    let mut total = 0.0;
    for i in 0..times.len() - 1 {
        let h = times[i + 1] - times[i];
        let x = 0.5 * (path.f[i] + path.f[i + 1]);
        let u = (path.g[i + 1] - path.g[i]) / h;
        let k = k_local(params, x, u)?;
        if k.is_infinite() {
            return Ok(f64::INFINITY);
        }
        total += h * k;
    }
    Ok(total)
}

/// Sample-path rate I(f, g) = I(f) + I(g | f) for absolutely continuous
/// paths (the only paths a [`PathGrid`] can represent; jump inputs must be
/// rejected by the caller at the representation level).
pub fn rate_sample_path(params: &ModelParams, path: &PathGrid) -> Result<RateResult> {
    let frate = rate_f(params, path)?;
    let grate = rate_g_given_f(params, path)?;
    let mut combined = frate;
    if grate.is_infinite() {
        combined.value = f64::INFINITY;
        combined.unbounded = true;
    } else {
        combined.value += grate;
    }
    Ok(combined)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Distribution, ModelParams};
    use crate::testutil::{bottom_row, top_row};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn rate_vanishes_at_the_fluid_point() {
        for p in [top_row(), bottom_row()] {
            for t in [0.8, 2.0] {
                let res =
                    rate_one_point(&p, t, p.fluid_population(t), p.fluid_claims(t)).unwrap();
                assert!(res.converged);
                assert!(res.value.abs() < 1e-9, "rate {} at fluid point", res.value);
                assert!(res.omega_star[0].abs() < 1e-3);
                assert!(res.theta_star[0].abs() < 1e-3);
            }
        }
    }

    #[test]
    fn rate_zero_for_empty_deterministic_model() {
        let p = ModelParams::new(
            0.0,
            0.0,
            3.0,
            3.0,
            Distribution::exponential(1.5).unwrap(),
            Distribution::exponential(1.0).unwrap(),
            Distribution::exponential(1.0).unwrap(),
        )
        .unwrap();
        let res = rate_one_point(&p, 1.0, 0.0, 0.0).unwrap();
        assert!(res.value.abs() < 1e-10);
    }

    #[test]
    fn dual_consistency_at_the_optimizer() {
        // At the optimizer, ∇N(ω*, θ*) = (f, g).
        let p = top_row();
        let (t, f, g) = (1.5, 1.35, -0.6);
        let res = rate_one_point(&p, t, f, g).unwrap();
        assert!(res.converged);
        let (w, th) = (res.omega_star[0], res.theta_star[0]);
        let h = 1e-5;
        let dn_dw = (mgf::log_n_one(&p, t, w + h, th).unwrap()
            - mgf::log_n_one(&p, t, w - h, th).unwrap())
            / (2.0 * h);
        let dn_dt = (mgf::log_n_one(&p, t, w, th + h).unwrap()
            - mgf::log_n_one(&p, t, w, th - h).unwrap())
            / (2.0 * h);
        assert_abs_diff_eq!(dn_dw, f, epsilon = 1e-5);
        assert_abs_diff_eq!(dn_dt, g, epsilon = 1e-5);
    }

    #[test]
    fn rate_multi_d1_matches_one_point() {
        let p = top_row();
        for (t, f, g) in [(1.0, 1.2, -0.4), (2.0, 0.8, 0.3)] {
            let one = rate_one_point(&p, t, f, g).unwrap();
            let grid = TimeGrid::single(t).unwrap();
            let multi = rate_multi(&p, &grid, &[f], &[g]).unwrap();
            assert!(one.converged && multi.converged);
            assert_abs_diff_eq!(one.value, multi.value, epsilon = 1e-8);
        }
    }

    #[test]
    fn rate_multi_zero_at_fluid_vector() {
        let p = top_row();
        let grid = TimeGrid::new(vec![0.7, 1.9]).unwrap();
        let fs: Vec<f64> = grid.times().iter().map(|&t| p.fluid_population(t)).collect();
        let gs: Vec<f64> = grid.times().iter().map(|&t| p.fluid_claims(t)).collect();
        let res = rate_multi(&p, &grid, &fs, &gs).unwrap();
        assert!(res.value.abs() < 1e-8);
    }

    #[test]
    fn contraction_appending_a_point_raises_the_rate() {
        let p = top_row();
        let base = rate_one_point(&p, 1.0, 1.3, -0.2).unwrap();
        let grid = TimeGrid::new(vec![1.0, 1.8]).unwrap();
        for (f2, g2) in [(1.0, -0.8), (1.5, 0.1), (0.7, -1.4)] {
            let refined = rate_multi(&p, &grid, &[1.3, f2], &[-0.2, g2]).unwrap();
            assert!(
                refined.value >= base.value - 1e-7,
                "contraction violated: {} < {}",
                refined.value,
                base.value
            );
        }
    }

    #[test]
    fn unbounded_rate_detected_without_claims() {
        // ν = 0: net claims can only drift down, so g = +1 is unreachable.
        let p = ModelParams::new(
            1.0,
            1.0,
            0.0,
            1.0,
            Distribution::exponential(1.0).unwrap(),
            Distribution::exponential(1.0).unwrap(),
            Distribution::exponential(1.0).unwrap(),
        )
        .unwrap();
        let res = rate_one_point(&p, 1.0, 1.0, 1.0).unwrap();
        assert!(res.unbounded, "expected divergence, got {res:?}");
        assert!(res.value.is_infinite());
    }

    #[test]
    fn k_local_zero_exactly_at_the_mean_rate() {
        for p in [top_row(), bottom_row()] {
            for x in [0.3, 1.0, 2.4] {
                let u = x * (p.nu * p.mean_claim() - p.r);
                let (v, theta) = k_local_with_dual(&p, x, u).unwrap();
                assert!(v.abs() < 1e-12, "K={v} at the mean rate");
                assert!(theta.unwrap().abs() < 1e-9);
                // Strictly positive elsewhere.
                assert!(k_local(&p, x, u + 0.3).unwrap() > 1e-4);
                assert!(k_local(&p, x, u - 0.3).unwrap() > 1e-4);
            }
        }
    }

    #[test]
    fn k_local_edge_cases() {
        let p = top_row();
        assert_eq!(k_local(&p, 0.0, 0.0).unwrap(), 0.0);
        assert!(k_local(&p, 0.0, 0.5).unwrap().is_infinite());
        // u < −r x is unreachable; u = −r x costs exactly xν.
        assert!(k_local(&p, 1.0, -3.5).unwrap().is_infinite());
        assert_relative_eq!(k_local(&p, 1.0, -3.0).unwrap(), p.nu, epsilon = 1e-12);
    }

    #[test]
    fn k_local_frozen_zero_rate_value() {
        // x=1, u=0 for top-row claims: stationarity gives (1.5 − θ*)² = 1.5,
        // so θ* = 1.5 − √1.5 and the value is −log φ(θ*) ≈ 0.1515307.
        let p = top_row();
        let v = k_local(&p, 1.0, 0.0).unwrap();
        let obj = |th: f64| p.log_phi(th).unwrap();
        let (_, min_log_phi) = opt::golden_section(obj, -2.0, 1.4, 1e-12, 400);
        assert_relative_eq!(v, -min_log_phi, epsilon = 1e-9);
        assert_relative_eq!(v, 0.15153074108544544, epsilon = 1e-7);
    }

    #[test]
    fn k_local_convex_in_u() {
        let p = top_row();
        let us: Vec<f64> = (-17..25).map(|i| i as f64 * 0.2).collect();
        for w in us.windows(3) {
            let k0 = k_local(&p, 1.2, w[0]).unwrap();
            let k1 = k_local(&p, 1.2, w[1]).unwrap();
            let k2 = k_local(&p, 1.2, w[2]).unwrap();
            if k0.is_finite() && k2.is_finite() {
                assert!(k1 <= 0.5 * (k0 + k2) + 1e-10);
            }
            assert!(k1 >= 0.0);
        }
    }

    #[test]
    fn k_local_displayed_kernel_differs() {
        // The audit-only φ kernel is not zero at the mean rate: with the
        // top-row claims its stationary point at u = νm̄ − r is θ* = 0, so
        // the supremum is −φ(0) = −1, not 0.
        let p = top_row();
        let u = 1.0 * (p.nu * p.mean_claim() - p.r);
        let log_phi_variant = k_local_with_kernel(&p, 1.0, u, KLocalKernel::LogPhi).unwrap();
        let phi_variant = k_local_with_kernel(&p, 1.0, u, KLocalKernel::PhiDisplayed).unwrap();
        assert!(log_phi_variant.abs() < 1e-12);
        assert_relative_eq!(phi_variant, -1.0, epsilon = 1e-6);
    }

    #[test]
    fn rate_f_zero_on_the_fluid_path() {
        // The discretized functional vanishes at the fluid path up to an
        // O(h³) floor: measured 7.8e-6 at 48 intervals, 4.1e-7 at 128.
        let p = top_row();
        let path = PathGrid::from_fns(3.0, 48, |t| p.fluid_population(t), |_| 0.0).unwrap();
        let res = rate_f(&p, &path).unwrap();
        assert!(res.converged);
        assert!(res.value < 2e-5, "fluid path cost {}", res.value);
        let fine = PathGrid::from_fns(3.0, 128, |t| p.fluid_population(t), |_| 0.0).unwrap();
        let res = rate_f(&p, &fine).unwrap();
        assert!(res.value < 1e-6, "fluid path cost {} at 128 intervals", res.value);

        let pb = bottom_row();
        let path = PathGrid::from_fns(2.5, 128, |t| pb.fluid_population(t), |_| 0.0).unwrap();
        let res = rate_f(&pb, &path).unwrap();
        assert!(res.value < 1e-6, "bottom-row fluid path cost {}", res.value);
    }

    #[test]
    fn rate_f_positive_off_fluid() {
        let p = top_row();
        for bump in [0.25, -0.2, 0.6] {
            let path = PathGrid::from_fns(
                2.0,
                40,
                |t| p.fluid_population(t) + bump * (std::f64::consts::PI * t / 2.0).sin(),
                |_| 0.0,
            )
            .unwrap();
            let res = rate_f(&p, &path).unwrap();
            assert!(res.value > 1e-4, "perturbed path cost {} (bump {bump})", res.value);
        }
    }

    #[test]
    fn rate_f_rejects_wrong_initial_mass() {
        let p = top_row();
        let path = PathGrid::from_fns(1.0, 16, |_| 2.0, |_| 0.0).unwrap();
        assert!(rate_f(&p, &path).is_err());
    }

    #[test]
    fn rate_g_given_f_zero_on_conditional_fluid() {
        let p = top_row();
        let drift = p.nu * p.mean_claim() - p.r;
        // g′(s) = f(s)(νm̄ − r) along a non-fluid f: the conditional mean.
        let f = |t: f64| 1.0 + 0.3 * t;
        let g = move |t: f64| drift * (t + 0.15 * t * t);
        let path = PathGrid::from_fns(2.0, 64, f, g).unwrap();
        let v = rate_g_given_f(&p, &path).unwrap();
        assert!(v.abs() < 1e-5, "conditional fluid cost {v}");
    }

    #[test]
    fn rate_g_given_f_zero_on_empty_path() {
        let p = bottom_row(); // f0 = 0
        let path = PathGrid::from_fns(1.0, 16, |_| 0.0, |_| 0.0).unwrap();
        assert_eq!(rate_g_given_f(&p, &path).unwrap(), 0.0);
    }

    #[test]
    fn rate_sample_path_zero_on_fluid_pair() {
        let p = top_row();
        let path =
            PathGrid::from_fns(3.0, 128, |t| p.fluid_population(t), |t| p.fluid_claims(t))
                .unwrap();
        let res = rate_sample_path(&p, &path).unwrap();
        assert!(res.value < 1e-6, "fluid pair cost {}", res.value);
    }

    #[test]
    fn rate_one_point_convex_midpoint() {
        let p = top_row();
        let t = 1.2;
        let pts = [(0.7, -0.5), (1.6, 0.4), (1.1, -1.2)];
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                let (f1, g1) = pts[i];
                let (f2, g2) = pts[j];
                let vm =
                    rate_one_point(&p, t, 0.5 * (f1 + f2), 0.5 * (g1 + g2)).unwrap().value;
                let v1 = rate_one_point(&p, t, f1, g1).unwrap().value;
                let v2 = rate_one_point(&p, t, f2, g2).unwrap().value;
                assert!(vm <= 0.5 * (v1 + v2) + 1e-7);
            }
        }
    }
}
