//! Moment generating functions of the bivariate (client mass, net claims)
//! process: one-point, multi-point, and their continuum limits, plus the
//! joint cumulant N used by the rate-function and path solvers.
//!
//! The process splits into two independent parts. The "minus" part covers
//! the f₀ clients present at time 0 (residual sojourn density h°); its
//! one-point mgf is
//!
//! ```text
//! M⁻_t(ω, θ) = ∫₀ᵗ h°(s) φ(θ)^s ds + φ(θ)^t e^ω h̄°(t).
//! ```
//!
//! The "plus" part covers the Poisson(λ) stream of later arrivals (sojourn
//! density h); its one-point mgf is
//!
//! ```text
//! M⁺_t(ω, θ) = exp(λ (∫₀ᵗ [∫₀^{t−s} h(r) φ(θ)^r dr + φ(θ)^{t−s} e^ω h̄(t−s)] ds − t)).
//! ```
//!
//! Multi-point versions run over a grid 0 ≤ t₁ < … < t_d and depend on the
//! duals only through the partial sums Ω_k = Σ_{j≤k} ω_j and
//! Θ_k = Σ_{j≥k} θ_j. Their continuum limits, under the embedding
//! θ_k = Δθ(kΔ), ω_k = Δω(kΔ), are expressed through
//! Ψ(u) = Ω(u) + ∫₀ᵘ log φ(Θ(s)) ds with Ω(s) = ∫₀ˢ ω and Θ(s) = ∫ₛᵀ θ.

use crate::model::ModelParams;
use crate::quad;
use crate::{Error, Result};

/// Ordered evaluation times 0 ≤ t₁ < t₂ < … < t_d.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidGrid("time grid must be non-empty".into()));
        }
        if !times.iter().all(|t| t.is_finite()) || times[0] < 0.0 {
            return Err(Error::InvalidGrid("times must be finite and >= 0".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("times must be strictly increasing".into()));
        }
        Ok(TimeGrid { times })
    }

    pub fn single(t: f64) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::InvalidGrid(format!("single time must be > 0, got {t}")));
        }
        Self::new(vec![t])
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Last grid time t_d.
    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// δ_k = t_k − t_{k−1} with t₀ = 0 (1-based k).
    fn delta(&self, k: usize) -> f64 {
        if k == 1 {
            self.times[0]
        } else {
            self.times[k - 1] - self.times[k - 2]
        }
    }
}

/// Dual variables (ω₁..ω_d, θ₁..θ_d) paired with a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct DualVector {
    pub omega: Vec<f64>,
    pub theta: Vec<f64>,
}

impl DualVector {
    pub fn new(omega: Vec<f64>, theta: Vec<f64>) -> Result<Self> {
        if omega.len() != theta.len() || omega.is_empty() {
            return Err(Error::InvalidGrid("dual vectors must have equal non-zero length".into()));
        }
        Ok(DualVector { omega, theta })
    }

    pub fn zeros(d: usize) -> Self {
        DualVector { omega: vec![0.0; d], theta: vec![0.0; d] }
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }
}

/// Precomputed partial-sum context for the multi-point evaluators.
struct MultiCtx {
    /// Ω_0..Ω_d (prefix sums of ω, Ω_0 = 0).
    omega_prefix: Vec<f64>,
    /// log φ(Θ_k) for k = 1..d, Θ_k = Σ_{j≥k} θ_j.
    log_phi: Vec<f64>,
    /// P_0..P_d with P_k = Σ_{j≤k} δ_j log φ(Θ_j): log Π_{j≤k} φ(Θ_j)^{δ_j}.
    log_phi_prefix: Vec<f64>,
}

impl MultiCtx {
    fn new(params: &ModelParams, grid: &TimeGrid, duals: &DualVector) -> Result<Self> {
        let d = grid.len();
        if duals.len() != d {
            return Err(Error::InvalidGrid(format!(
                "dual length {} does not match grid length {d}",
                duals.len()
            )));
        }
        let mut omega_prefix = vec![0.0; d + 1];
        for k in 1..=d {
            omega_prefix[k] = omega_prefix[k - 1] + duals.omega[k - 1];
        }
        let mut log_phi = vec![0.0; d];
        let mut theta_suffix = 0.0;
        for k in (0..d).rev() {
            theta_suffix += duals.theta[k];
            log_phi[k] = params.log_phi(theta_suffix)?;
        }
        let mut log_phi_prefix = vec![0.0; d + 1];
        for k in 1..=d {
            log_phi_prefix[k] = log_phi_prefix[k - 1] + grid.delta(k) * log_phi[k - 1];
        }
        Ok(MultiCtx { omega_prefix, log_phi, log_phi_prefix })
    }

    /// Some φ power overflows on the grid span: the mgf is +∞ numerically.
    fn overflows(&self, span: f64) -> bool {
        self.log_phi.iter().any(|&l| l * span > EXP_OVERFLOW)
    }
}

/// Exponent beyond which e^x overflows f64; used to short-circuit mgf
/// evaluations that are infinite for all practical purposes.
const EXP_OVERFLOW: f64 = 709.0;

/// One-point mgf of the initially-present part.
pub fn m_minus_one(params: &ModelParams, t: f64, omega: f64, theta: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidQuery(format!("m_minus_one needs t > 0, got {t}")));
    }
    let lphi = params.log_phi(theta)?;
    if lphi * t > EXP_OVERFLOW {
        return Ok(f64::INFINITY);
    }
    let integral = params.residual.mass_weighted(0.0, t, |s| (s * lphi).exp());
    Ok(integral + (t * lphi + omega).exp() * params.residual.tail(t))
}

/// Reading of the exponent in the one-point plus mgf.
///
/// The Poisson thinning derivation gives exponent λ(∫₀ᵗ … ds − t), which is
/// the only reading with M⁺(0,0) = 1; the alternative `DisplayedMinusOne`
/// variant (exponent λ(∫ … ds − 1)) is kept for audit only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlusExponentReading {
    #[default]
    MinusT,
    DisplayedMinusOne,
}

/// One-point mgf of the after-time-zero arrivals part.
pub fn m_plus_one(params: &ModelParams, t: f64, omega: f64, theta: f64) -> Result<f64> {
    m_plus_one_with_reading(params, t, omega, theta, PlusExponentReading::MinusT)
}

/// As [`m_plus_one`] with an explicit exponent reading (diagnostics only).
pub fn m_plus_one_with_reading(
    params: &ModelParams,
    t: f64,
    omega: f64,
    theta: f64,
    reading: PlusExponentReading,
) -> Result<f64> {
    Ok(log_m_plus_one_with_reading(params, t, omega, theta, reading)?.exp())
}

/// log M⁺_t(ω, θ) under the default exponent reading.
pub fn log_m_plus_one(params: &ModelParams, t: f64, omega: f64, theta: f64) -> Result<f64> {
    log_m_plus_one_with_reading(params, t, omega, theta, PlusExponentReading::MinusT)
}

fn log_m_plus_one_with_reading(
    params: &ModelParams,
    t: f64,
    omega: f64,
    theta: f64,
    reading: PlusExponentReading,
) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidQuery(format!("m_plus_one needs t > 0, got {t}")));
    }
    let lphi = params.log_phi(theta)?;
    if lphi * t > EXP_OVERFLOW {
        return Ok(f64::INFINITY);
    }
    let sojourn = &params.sojourn;
    // The double integral ∫₀ᵗ ∫₀^{t−s} h(r) φ^r dr ds collapses by Fubini to
    // ∫₀ᵗ h(r) φ^r (t − r) dr, and the stay term substitutes x = t − s.
    let left = sojourn.mass_weighted(0.0, t, |r| (r * lphi).exp() * (t - r));
    let stayed = quad::integrate_with_knots(
        |x| (x * lphi + omega).exp() * sojourn.tail(x),
        0.0,
        t,
        &sojourn.density_knots(),
        quad::DEFAULT_TOL,
    );
    let adjustment = match reading {
        PlusExponentReading::MinusT => t,
        PlusExponentReading::DisplayedMinusOne => 1.0,
    };
    Ok(params.lambda * (left + stayed - adjustment))
}

/// One-point joint cumulant N_t(ω, θ) = f₀ log M⁻_t + log M⁺_t, evaluated
/// through the one-point formulas (the multi-point route is [`log_n`]).
pub fn log_n_one(params: &ModelParams, t: f64, omega: f64, theta: f64) -> Result<f64> {
    let plus = log_m_plus_one(params, t, omega, theta)?;
    let minus = if params.f0 == 0.0 {
        0.0
    } else {
        params.f0 * m_minus_one(params, t, omega, theta)?.ln()
    };
    Ok(minus + plus)
}

/// Multi-point mgf of the initially-present part (grid version of M⁻).
pub fn m_minus_multi(params: &ModelParams, grid: &TimeGrid, duals: &DualVector) -> Result<f64> {
    let ctx = MultiCtx::new(params, grid, duals)?;
    if ctx.overflows(grid.horizon()) {
        return Ok(f64::INFINITY);
    }
    let d = grid.len();
    let times = grid.times();
    let mut total = 0.0;
    for k in 1..=d {
        let t_lo = if k == 1 { 0.0 } else { times[k - 2] };
        let t_hi = times[k - 1];
        let lphi_k = ctx.log_phi[k - 1];
        let weight = (ctx.omega_prefix[k - 1] + ctx.log_phi_prefix[k - 1]).exp();
        let integral =
            params.residual.mass_weighted(t_lo, t_hi, |s| ((s - t_lo) * lphi_k).exp());
        total += weight * integral;
    }
    total += (ctx.omega_prefix[d] + ctx.log_phi_prefix[d]).exp()
        * params.residual.tail(grid.horizon());
    Ok(total)
}

/// Multi-point mgf of the arrivals part (grid version of M⁺).
pub fn m_plus_multi(params: &ModelParams, grid: &TimeGrid, duals: &DualVector) -> Result<f64> {
    Ok(log_m_plus_multi(params, grid, duals)?.exp())
}

/// log M⁺ on a grid: λ Σ_ℓ δ_ℓ (M̄⁺_ℓ − 1), where M̄⁺_ℓ is the mgf of the
/// contribution of one client arriving uniformly in (t_{ℓ−1}, t_ℓ].
pub fn log_m_plus_multi(
    params: &ModelParams,
    grid: &TimeGrid,
    duals: &DualVector,
) -> Result<f64> {
    let ctx = MultiCtx::new(params, grid, duals)?;
    if ctx.overflows(grid.horizon()) {
        return Ok(f64::INFINITY);
    }
    let d = grid.len();
    let times = grid.times();
    let time_at = |j: usize| if j == 0 { 0.0 } else { times[j - 1] };
    let sojourn = &params.sojourn;

    let mut soj_knots = sojourn.density_knots();
    if let Some((loc, _)) = sojourn.atom() {
        soj_knots.push(loc);
    }

    let mut exponent = 0.0;
    for ell in 1..=d {
        let delta_l = grid.delta(ell);
        if delta_l == 0.0 {
            continue;
        }
        let base = time_at(ell - 1);
        let lphi_l = ctx.log_phi[ell - 1];

        // mbar(s): the per-client mgf for arrival offset s in [0, δ_ℓ].
        let mbar = |s: f64| {
            // Client gone by t_ℓ.
            let mut v = sojourn.mass_weighted(0.0, delta_l - s, |r| (r * lphi_l).exp());
            // Client leaves between t_k and t_{k+1} for k = ℓ..d−1.
            for k in ell..d {
                let lo = times[k - 1] - base - s;
                let hi = times[k] - base - s;
                let lphi_next = ctx.log_phi[k];
                let scale = ctx.omega_prefix[k] - ctx.omega_prefix[ell - 1]
                    + (delta_l - s) * lphi_l
                    + (ctx.log_phi_prefix[k] - ctx.log_phi_prefix[ell]);
                v += scale.exp()
                    * sojourn.mass_weighted(lo, hi, |r| ((r - lo) * lphi_next).exp());
            }
            // Client stays past t_d.
            let stay = ctx.omega_prefix[d] - ctx.omega_prefix[ell - 1]
                + (delta_l - s) * lphi_l
                + (ctx.log_phi_prefix[d] - ctx.log_phi_prefix[ell]);
            v += stay.exp() * sojourn.tail(grid.horizon() - base - s);
            v
        };

        // Knots in s where any inner boundary t_j − base − s crosses a
        // sojourn density knot or atom.
        let mut knots = Vec::new();
        for j in (ell - 1)..=d {
            for &kappa in &soj_knots {
                knots.push(time_at(j) - base - kappa);
            }
        }
        let integral = quad::integrate_with_knots(mbar, 0.0, delta_l, &knots, quad::DEFAULT_TOL);
        exponent += params.lambda * (integral - delta_l);
    }
    Ok(exponent)
}

/// Joint cumulant N_t(ω, θ) = f₀ log M⁻ + log M⁺ of (F̄, Ḡ) at the grid.
pub fn log_n(params: &ModelParams, grid: &TimeGrid, duals: &DualVector) -> Result<f64> {
    let minus = m_minus_multi(params, grid, duals)?;
    let plus_log = log_m_plus_multi(params, grid, duals)?;
    // f₀ = 0 tolerates M⁻ degenerate; otherwise M⁻ > 0 by construction.
    let minus_term = if params.f0 == 0.0 { 0.0 } else { params.f0 * minus.ln() };
    Ok(minus_term + plus_log)
}

/// Continuous dual functions ω(·), θ(·) on [0, T], stored as values on a
/// uniform grid with linear interpolation. Interpolation error is the
/// caller's resolution choice.
#[derive(Debug, Clone, PartialEq)]
pub struct DualFunction {
    horizon: f64,
    omega: Vec<f64>,
    theta: Vec<f64>,
}

impl DualFunction {
    /// Default number of grid intervals.
    pub const DEFAULT_RESOLUTION: usize = 512;

    pub fn from_values(horizon: f64, omega: Vec<f64>, theta: Vec<f64>) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon must be > 0, got {horizon}")));
        }
        if omega.len() != theta.len() || omega.len() < 3 {
            return Err(Error::InvalidGrid(
                "dual functions need equal lengths with at least 3 nodes".into(),
            ));
        }
        if !omega.iter().chain(theta.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidGrid("dual function values must be finite".into()));
        }
        Ok(DualFunction { horizon, omega, theta })
    }

    /// Sample `omega` and `theta` on `intervals + 1` uniform nodes.
    pub fn from_fns<F, G>(horizon: f64, intervals: usize, omega: F, theta: G) -> Result<Self>
    where
        F: Fn(f64) -> f64,
        G: Fn(f64) -> f64,
    {
        let n = intervals.max(2);
        let step = horizon / n as f64;
        let om = (0..=n).map(|i| omega(i as f64 * step)).collect();
        let th = (0..=n).map(|i| theta(i as f64 * step)).collect();
        Self::from_values(horizon, om, th)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    fn intervals(&self) -> usize {
        self.omega.len() - 1
    }

    fn step(&self) -> f64 {
        self.horizon / self.intervals() as f64
    }
}

/// Node-level cache of Ω, Θ and Ψ along a dual function.
struct PsiTable {
    step: f64,
    /// Ω(s_i) = ∫₀^{s_i} ω.
    omega_int: Vec<f64>,
    /// Θ(s_i) = ∫_{s_i}^T θ.
    theta_int: Vec<f64>,
    /// Ψ(s_i) = Ω(s_i) + ∫₀^{s_i} log φ(Θ(s)) ds.
    psi: Vec<f64>,
}

impl PsiTable {
    fn build(params: &ModelParams, duals: &DualFunction) -> Result<Self> {
        let n = duals.intervals();
        let h = duals.step();
        let mut omega_int = vec![0.0; n + 1];
        for i in 1..=n {
            omega_int[i] = omega_int[i - 1] + 0.5 * h * (duals.omega[i - 1] + duals.omega[i]);
        }
        let mut theta_int = vec![0.0; n + 1];
        for i in (0..n).rev() {
            theta_int[i] = theta_int[i + 1] + 0.5 * h * (duals.theta[i] + duals.theta[i + 1]);
        }
        let mut lphi = vec![0.0; n + 1];
        for i in 0..=n {
            lphi[i] = params.log_phi(theta_int[i])?;
        }
        let mut psi = vec![0.0; n + 1];
        for i in 1..=n {
            psi[i] = psi[i - 1] + 0.5 * h * (lphi[i - 1] + lphi[i]);
        }
        for i in 0..=n {
            psi[i] += omega_int[i];
        }
        Ok(PsiTable { step: h, omega_int, theta_int, psi })
    }

    fn interp(values: &[f64], step: f64, u: f64) -> f64 {
        let n = values.len() - 1;
        let x = (u / step).clamp(0.0, n as f64);
        let i = (x.floor() as usize).min(n - 1);
        let frac = x - i as f64;
        values[i] * (1.0 - frac) + values[i + 1] * frac
    }

    fn psi_at(&self, u: f64) -> f64 {
        Self::interp(&self.psi, self.step, u)
    }
}

/// Ψ_{ω,θ}(u) = Ω(u) + ∫₀ᵘ log φ(Θ(s)) ds for u ∈ [0, T].
pub fn psi(params: &ModelParams, duals: &DualFunction, u: f64) -> Result<f64> {
    if !(0.0..=duals.horizon() + 1e-12).contains(&u) {
        return Err(Error::InvalidQuery(format!(
            "psi argument {u} outside [0, {}]",
            duals.horizon()
        )));
    }
    Ok(PsiTable::build(params, duals)?.psi_at(u))
}

/// Ω(u) along the dual function (test and diagnostic hook).
pub fn omega_integral(params: &ModelParams, duals: &DualFunction, u: f64) -> Result<f64> {
    let table = PsiTable::build(params, duals)?;
    Ok(PsiTable::interp(&table.omega_int, table.step, u))
}

/// Θ(u) along the dual function (test and diagnostic hook).
pub fn theta_integral(params: &ModelParams, duals: &DualFunction, u: f64) -> Result<f64> {
    let table = PsiTable::build(params, duals)?;
    Ok(PsiTable::interp(&table.theta_int, table.step, u))
}

/// Limiting minus mgf: ∫₀ᵀ h°(u) e^{Ψ(u)} du + h̄°(T) e^{Ψ(T)}.
pub fn m_minus_limit(params: &ModelParams, duals: &DualFunction) -> Result<f64> {
    let table = PsiTable::build(params, duals)?;
    let big_t = duals.horizon();
    let integral = params
        .residual
        .mass_weighted(0.0, big_t, |u| table.psi_at(u).exp());
    Ok(integral + params.residual.tail(big_t) * table.psi_at(big_t).exp())
}

/// Limiting plus mgf: exp(λ ∫₀ᵀ (Φ(s) + Φ̄(s) − 1) ds) with
/// Φ(s) = ∫ₛᵀ h(r−s) e^{Ψ(r)−Ψ(s)} dr and Φ̄(s) = h̄(T−s) e^{Ψ(T)−Ψ(s)}.
pub fn m_plus_limit(params: &ModelParams, duals: &DualFunction) -> Result<f64> {
    let table = PsiTable::build(params, duals)?;
    let big_t = duals.horizon();
    let n = duals.intervals();
    let h = table.step;
    let psi_t = table.psi_at(big_t);

    // Trapezoid over the dual-function grid; the integrand is only known at
    // interpolation resolution anyway.
    let mut outer = 0.0;
    for i in 0..=n {
        let s = i as f64 * h;
        let psi_s = table.psi[i];
        let phi_big = params
            .sojourn
            .mass_weighted(0.0, big_t - s, |x| (table.psi_at(s + x) - psi_s).exp());
        let phi_bar = params.sojourn.tail(big_t - s) * (psi_t - psi_s).exp();
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        outer += w * h * (phi_big + phi_bar - 1.0);
    }
    Ok((params.lambda * outer).exp())
}

/// Step-function embedding of smooth duals onto a d-point grid:
/// t_k = kΔ, θ_k = Δ θ(kΔ), ω_k = Δ ω(kΔ) with Δ = T/d. The multi-point
/// mgfs under this embedding converge to the limiting mgfs as Δ ↓ 0.
pub fn step_embedding<F, G>(
    horizon: f64,
    d: usize,
    omega: F,
    theta: G,
) -> Result<(TimeGrid, DualVector)>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    if d == 0 || !(horizon > 0.0) {
        return Err(Error::InvalidGrid("step embedding needs d >= 1 and horizon > 0".into()));
    }
    let delta = horizon / d as f64;
    let times: Vec<f64> = (1..=d).map(|k| k as f64 * delta).collect();
    let omega_v: Vec<f64> = times.iter().map(|&t| delta * omega(t)).collect();
    let theta_v: Vec<f64> = times.iter().map(|&t| delta * theta(t)).collect();
    Ok((TimeGrid::new(times)?, DualVector::new(omega_v, theta_v)?))
}
