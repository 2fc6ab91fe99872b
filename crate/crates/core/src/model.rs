//! Model specification: probability laws, model parameters, the per-client
//! Lévy exponent φ and the fluid limits (f̄, ḡ).
//!
//! The model: clients arrive at rate λ and stay for an i.i.d. sojourn time
//! with density h. The f₀ clients present at time 0 carry residual sojourn
//! times with density h°. While present, a client pays premiums at rate r
//! and generates claims at Poisson rate ν with i.i.d. sizes whose mgf is β.
//! The net claim process of a single client is a compound Poisson process
//! with drift, with per-unit-time mgf
//!
//! ```text
//! φ(θ) = exp(−rθ + ν(β(θ) − 1)).
//! ```

use rand::Rng;
use rand_distr::Distribution as RandDistribution;
use serde::{Deserialize, Serialize};

use crate::quad;
use crate::{Error, Result};

/// Truncate tail integrals where the tail has dropped below this.
const TAIL_CUTOFF: f64 = 1e-12;

/// A probability law on [0, ∞): claims, sojourn times, residual sojourn times.
///
/// `excess-of` is the stationary residual (excess lifetime) law of its inner
/// distribution, with density `inner.tail(t) / inner.mean()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "kebab-case")]
pub enum Distribution {
    Exponential { rate: f64 },
    Uniform { lower: f64, upper: f64 },
    Deterministic { value: f64 },
    Gamma { shape: f64, rate: f64 },
    ExcessOf { inner: Box<Distribution> },
}

impl Distribution {
    pub fn exponential(rate: f64) -> Result<Self> {
        let d = Distribution::Exponential { rate };
        d.validate().map(|_| d)
    }

    /// Exponential law with the given mean.
    pub fn exponential_mean(mean: f64) -> Result<Self> {
        if !(mean > 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "exponential mean must be positive, got {mean}"
            )));
        }
        Self::exponential(1.0 / mean)
    }

    pub fn uniform(lower: f64, upper: f64) -> Result<Self> {
        let d = Distribution::Uniform { lower, upper };
        d.validate().map(|_| d)
    }

    pub fn deterministic(value: f64) -> Result<Self> {
        let d = Distribution::Deterministic { value };
        d.validate().map(|_| d)
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        let d = Distribution::Gamma { shape, rate };
        d.validate().map(|_| d)
    }

    pub fn excess_of(inner: Distribution) -> Result<Self> {
        let d = Distribution::ExcessOf { inner: Box::new(inner) };
        d.validate().map(|_| d)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDistribution(msg));
        match self {
            Distribution::Exponential { rate } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return bad(format!("exponential rate must be positive, got {rate}"));
                }
            }
            Distribution::Uniform { lower, upper } => {
                if !(lower.is_finite() && upper.is_finite() && *lower >= 0.0 && upper > lower) {
                    return bad(format!("uniform needs 0 <= lower < upper, got [{lower}, {upper}]"));
                }
            }
            Distribution::Deterministic { value } => {
                if !(value.is_finite() && *value > 0.0) {
                    return bad(format!("deterministic value must be positive, got {value}"));
                }
            }
            Distribution::Gamma { shape, rate } => {
                if !(shape.is_finite() && *shape > 0.0 && rate.is_finite() && *rate > 0.0) {
                    return bad(format!("gamma needs positive shape/rate, got ({shape}, {rate})"));
                }
            }
            Distribution::ExcessOf { inner } => inner.validate()?,
        }
        Ok(())
    }

    /// Density at `t` (0 for t < 0). The deterministic law returns +∞ at its
    /// atom; integral evaluations must go through [`Distribution::mass_weighted`].
    pub fn density(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self {
            Distribution::Exponential { rate } => rate * (-rate * t).exp(),
            Distribution::Uniform { lower, upper } => {
                if t >= *lower && t <= *upper {
                    1.0 / (upper - lower)
                } else {
                    0.0
                }
            }
            Distribution::Deterministic { value } => {
                if t == *value {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            Distribution::Gamma { shape, rate } => {
                if t == 0.0 {
                    // shape < 1 diverges at 0, shape == 1 is the exponential.
                    return if *shape < 1.0 {
                        f64::INFINITY
                    } else if *shape == 1.0 {
                        *rate
                    } else {
                        0.0
                    };
                }
                let ln = shape * rate.ln() + (shape - 1.0) * t.ln()
                    - rate * t
                    - statrs::function::gamma::ln_gamma(*shape);
                ln.exp()
            }
            Distribution::ExcessOf { inner } => inner.tail(t) / inner.mean(),
        }
    }

    /// Complementary cdf P(τ > t); equals 1 for t < 0.
    pub fn tail(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 1.0;
        }
        match self {
            Distribution::Exponential { rate } => (-rate * t).exp(),
            Distribution::Uniform { lower, upper } => {
                if t < *lower {
                    1.0
                } else if t < *upper {
                    (upper - t) / (upper - lower)
                } else {
                    0.0
                }
            }
            Distribution::Deterministic { value } => {
                if t < *value {
                    1.0
                } else {
                    0.0
                }
            }
            Distribution::Gamma { shape, rate } => {
                if t == 0.0 {
                    1.0
                } else {
                    statrs::function::gamma::gamma_ur(*shape, rate * t)
                }
            }
            Distribution::ExcessOf { inner } => inner.integrated_tail(t) / inner.mean(),
        }
    }

    /// ∫_t^∞ tail(s) ds = E (τ − t)⁺. Closed form except for nested excess laws.
    pub fn integrated_tail(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        match self {
            Distribution::Exponential { rate } => (-rate * t).exp() / rate,
            Distribution::Uniform { lower, upper } => {
                if t >= *upper {
                    0.0
                } else if t >= *lower {
                    (upper - t) * (upper - t) / (2.0 * (upper - lower))
                } else {
                    (lower - t) + 0.5 * (upper - lower)
                }
            }
            Distribution::Deterministic { value } => (value - t).max(0.0),
            Distribution::Gamma { shape, rate } => {
                if t == 0.0 {
                    return shape / rate;
                }
                let p_up = statrs::function::gamma::gamma_ur(shape + 1.0, rate * t);
                let q_up = statrs::function::gamma::gamma_ur(*shape, rate * t);
                (shape / rate) * p_up - t * q_up
            }
            Distribution::ExcessOf { .. } => {
                let hi = self.tail_cutoff_point();
                quad::integrate(|s| self.tail(s), t, hi, quad::DEFAULT_TOL)
            }
        }
    }

    /// Smallest point past which the tail is below the truncation threshold.
    fn tail_cutoff_point(&self) -> f64 {
        if let Some(hi) = self.support_upper_finite() {
            return hi;
        }
        let mut hi = self.mean().max(1.0);
        while self.tail(hi) > TAIL_CUTOFF {
            hi *= 2.0;
        }
        hi
    }

    /// Upper edge of the support when finite.
    pub fn support_upper_finite(&self) -> Option<f64> {
        match self {
            Distribution::Uniform { upper, .. } => Some(*upper),
            Distribution::Deterministic { value } => Some(*value),
            Distribution::ExcessOf { inner } => inner.support_upper_finite(),
            _ => None,
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Distribution::Exponential { rate } => 1.0 / rate,
            Distribution::Uniform { lower, upper } => 0.5 * (lower + upper),
            Distribution::Deterministic { value } => *value,
            Distribution::Gamma { shape, rate } => shape / rate,
            // E of the excess law is E τ² / (2 E τ) of the inner law.
            Distribution::ExcessOf { inner } => inner.second_moment() / (2.0 * inner.mean()),
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            Distribution::Exponential { rate } => 2.0 / (rate * rate),
            Distribution::Uniform { lower, upper } => {
                (lower * lower + lower * upper + upper * upper) / 3.0
            }
            Distribution::Deterministic { value } => value * value,
            Distribution::Gamma { shape, rate } => shape * (shape + 1.0) / (rate * rate),
            Distribution::ExcessOf { inner } => inner.third_moment() / (3.0 * inner.mean()),
        }
    }

    fn third_moment(&self) -> f64 {
        match self {
            Distribution::Exponential { rate } => 6.0 / rate.powi(3),
            Distribution::Uniform { lower, upper } => {
                0.25 * (upper.powi(4) - lower.powi(4)) / (upper - lower)
            }
            Distribution::Deterministic { value } => value.powi(3),
            Distribution::Gamma { shape, rate } => {
                shape * (shape + 1.0) * (shape + 2.0) / rate.powi(3)
            }
            Distribution::ExcessOf { .. } => {
                // E τ³ = 3 ∫ s² tail(s) ds; only reachable for nested excess laws.
                let hi = self.tail_cutoff_point();
                3.0 * quad::integrate(|s| s * s * self.tail(s), 0.0, hi, quad::DEFAULT_TOL)
            }
        }
    }

    /// Supremum of the finiteness interval of the mgf.
    pub fn theta_max(&self) -> f64 {
        match self {
            Distribution::Exponential { rate } => *rate,
            Distribution::Uniform { .. } | Distribution::Deterministic { .. } => f64::INFINITY,
            Distribution::Gamma { rate, .. } => *rate,
            Distribution::ExcessOf { inner } => inner.theta_max(),
        }
    }

    /// Moment generating function E e^{θτ}; domain error at or beyond the
    /// finiteness abscissa.
    pub fn mgf(&self, theta: f64) -> Result<f64> {
        let tmax = self.theta_max();
        if theta >= tmax {
            return Err(Error::MgfDomain { theta, theta_max: tmax });
        }
        Ok(self.mgf_unchecked(theta))
    }

    fn mgf_unchecked(&self, theta: f64) -> f64 {
        match self {
            Distribution::Exponential { rate } => rate / (rate - theta),
            Distribution::Uniform { lower, upper } => {
                let w = theta * (upper - lower);
                if w.abs() < 1e-8 {
                    (theta * lower).exp() * (1.0 + 0.5 * w + w * w / 6.0)
                } else {
                    (theta * lower).exp() * w.exp_m1() / w
                }
            }
            Distribution::Deterministic { value } => (theta * value).exp(),
            Distribution::Gamma { shape, rate } => (-shape * (1.0 - theta / rate).ln()).exp(),
            Distribution::ExcessOf { inner } => {
                // ∫ e^{θt} tail(t)/m dt = (β_inner(θ) − 1)/(θ m).
                let m = inner.mean();
                if theta.abs() < 1e-8 {
                    1.0 + theta * inner.second_moment() / (2.0 * m)
                } else {
                    (inner.mgf_unchecked(theta) - 1.0) / (theta * m)
                }
            }
        }
    }

    /// Derivative β′(θ) = E τ e^{θτ}, used by the local Legendre transforms.
    pub fn mgf_deriv(&self, theta: f64) -> Result<f64> {
        let tmax = self.theta_max();
        if theta >= tmax {
            return Err(Error::MgfDomain { theta, theta_max: tmax });
        }
        let v = match self {
            Distribution::Exponential { rate } => rate / ((rate - theta) * (rate - theta)),
            Distribution::Uniform { lower, upper } => {
                let w = theta * (upper - lower);
                if w.abs() < 1e-6 {
                    self.mean()
                        + theta * self.second_moment()
                        + 0.5 * theta * theta * self.third_moment()
                } else {
                    let eb = (theta * upper).exp();
                    let ea = (theta * lower).exp();
                    (upper * eb - lower * ea) / w - (eb - ea) / (theta * w)
                }
            }
            Distribution::Deterministic { value } => value * (theta * value).exp(),
            Distribution::Gamma { shape, rate } => {
                self.mgf_unchecked(theta) * shape / (rate - theta)
            }
            Distribution::ExcessOf { inner } => {
                let m = inner.mean();
                if theta.abs() < 1e-6 {
                    self.mean() + theta * self.second_moment()
                } else {
                    let b = inner.mgf_unchecked(theta);
                    let bp = inner.mgf_deriv(theta)?;
                    (bp * theta - (b - 1.0)) / (theta * theta * m)
                }
            }
        };
        Ok(v)
    }

    /// Location and mass of the point atom, if the law has one.
    pub fn atom(&self) -> Option<(f64, f64)> {
        match self {
            Distribution::Deterministic { value } => Some((*value, 1.0)),
            _ => None,
        }
    }

    /// Abscissae where the density or tail is not smooth; quadratures split here.
    pub fn density_knots(&self) -> Vec<f64> {
        match self {
            Distribution::Uniform { lower, upper } => vec![*lower, *upper],
            Distribution::Deterministic { value } => vec![*value],
            Distribution::ExcessOf { inner } => inner.density_knots(),
            _ => Vec::new(),
        }
    }

    /// ∫_(a,b] w(τ) dP(τ) for finite 0 ≤ a ≤ b: the weighted mass of the law
    /// on a half-open interval. Point masses on the boundary follow the
    /// half-open convention (an atom at exactly `a` is excluded, at `b`
    /// included), which matches "client still present at t ⇔ τ > t".
    pub fn mass_weighted<F: Fn(f64) -> f64>(&self, a: f64, b: f64, w: F) -> f64 {
        let a = a.max(0.0);
        if !(b > a) {
            return 0.0;
        }
        if let Some((loc, mass)) = self.atom() {
            return if loc > a && loc <= b { mass * w(loc) } else { 0.0 };
        }
        let hi = match self.support_upper_finite() {
            Some(u) => b.min(u),
            None => b,
        };
        let knots = self.density_knots();
        quad::integrate_with_knots(|t| self.density(t) * w(t), a, hi, &knots, quad::DEFAULT_TOL)
    }

    /// `true` when the density is uniformly bounded (required of residual laws).
    pub fn has_bounded_density(&self) -> bool {
        match self {
            Distribution::Exponential { .. } | Distribution::Uniform { .. } => true,
            Distribution::Deterministic { .. } => false,
            Distribution::Gamma { shape, .. } => *shape >= 1.0,
            // tail/mean ≤ 1/mean.
            Distribution::ExcessOf { .. } => true,
        }
    }

    /// Same family rescaled to the given mean (used by parameter sweeps).
    pub fn scaled_to_mean(&self, mean: f64) -> Result<Self> {
        if !(mean > 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "target mean must be positive, got {mean}"
            )));
        }
        let c = mean / self.mean();
        let scaled = match self {
            Distribution::Exponential { rate } => Distribution::Exponential { rate: rate / c },
            Distribution::Uniform { lower, upper } => {
                Distribution::Uniform { lower: lower * c, upper: upper * c }
            }
            Distribution::Deterministic { .. } => Distribution::Deterministic { value: mean },
            Distribution::Gamma { shape, rate } => {
                Distribution::Gamma { shape: *shape, rate: rate / c }
            }
            Distribution::ExcessOf { inner } => Distribution::ExcessOf {
                inner: Box::new(inner.scaled_to_mean(inner.mean() * c)?),
            },
        };
        Ok(scaled)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Distribution::Exponential { rate } => {
                rand_distr::Exp::new(*rate).unwrap().sample(rng)
            }
            Distribution::Uniform { lower, upper } => rng.gen_range(*lower..*upper),
            Distribution::Deterministic { value } => *value,
            Distribution::Gamma { shape, rate } => {
                rand_distr::Gamma::new(*shape, 1.0 / rate).unwrap().sample(rng)
            }
            Distribution::ExcessOf { inner } => match inner.as_ref() {
                // Memorylessness: the excess of an exponential is itself.
                Distribution::Exponential { .. } => inner.sample(rng),
                Distribution::Deterministic { value } => rng.gen_range(0.0..*value),
                _ => {
                    // Inverse cdf by bisection on the (strictly decreasing) tail.
                    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    let mut hi = self.mean().max(1.0);
                    while self.tail(hi) > u {
                        hi *= 2.0;
                    }
                    let mut lo = 0.0;
                    for _ in 0..64 {
                        let mid = 0.5 * (lo + hi);
                        if self.tail(mid) > u {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    0.5 * (lo + hi)
                }
            },
        }
    }
}

/// Full model specification.
///
/// `n`, the external scaling parameter, lives in the simulator configuration;
/// everything here is per unit of n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Client arrival rate (per unit time, pre-scaling).
    pub lambda: f64,
    /// Initial client mass.
    pub f0: f64,
    /// Per-client claim rate.
    pub nu: f64,
    /// Per-client premium rate.
    pub r: f64,
    /// Claim-size law (mgf β).
    pub claim: Distribution,
    /// Sojourn-time law (density h).
    pub sojourn: Distribution,
    /// Residual sojourn-time law of the clients present at time 0 (density h°).
    pub residual: Distribution,
}

impl ModelParams {
    pub fn new(
        lambda: f64,
        f0: f64,
        nu: f64,
        r: f64,
        claim: Distribution,
        sojourn: Distribution,
        residual: Distribution,
    ) -> Result<Self> {
        let p = ModelParams { lambda, f0, nu, r, claim, sojourn, residual };
        p.validate()?;
        Ok(p)
    }

    /// Model with the residual law set to the excess lifetime distribution of
    /// the sojourn law (the stationary M/G/∞ choice).
    pub fn equilibrium(
        lambda: f64,
        f0: f64,
        nu: f64,
        r: f64,
        claim: Distribution,
        sojourn: Distribution,
    ) -> Result<Self> {
        let residual = Distribution::excess_of(sojourn.clone())?;
        Self::new(lambda, f0, nu, r, claim, sojourn, residual)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.f0.is_finite() && self.f0 >= 0.0) {
            return bad(format!("f0 must be >= 0, got {}", self.f0));
        }
        if !(self.nu.is_finite() && self.nu >= 0.0) {
            return bad(format!("nu must be >= 0, got {}", self.nu));
        }
        if !(self.r.is_finite() && self.r > 0.0) {
            return bad(format!("r must be > 0, got {}", self.r));
        }
        self.claim.validate()?;
        self.sojourn.validate()?;
        self.residual.validate()?;
        if !self.residual.has_bounded_density() {
            return bad("residual law must have a uniformly bounded density".into());
        }
        if let Distribution::Gamma { shape, .. } = self.sojourn {
            // The mgf quadratures integrate h directly; an integrable
            // singularity at 0 (shape < 1) would defeat them.
            if shape < 1.0 {
                return bad("gamma sojourn requires shape >= 1".into());
            }
        }
        Ok(())
    }

    /// Finiteness abscissa of log φ: the claim mgf abscissa, except that a
    /// model without claims (ν = 0) is pure drift and has none.
    pub fn theta_max(&self) -> f64 {
        if self.nu == 0.0 {
            f64::INFINITY
        } else {
            self.claim.theta_max()
        }
    }

    /// Mean claim size m̄.
    pub fn mean_claim(&self) -> f64 {
        self.claim.mean()
    }

    /// Per-client net-claim Lévy exponent: log φ(θ) = −rθ + ν(β(θ) − 1).
    pub fn log_phi(&self, theta: f64) -> Result<f64> {
        if self.nu == 0.0 {
            return Ok(-self.r * theta);
        }
        let beta = self.claim.mgf(theta)?;
        Ok(-self.r * theta + self.nu * (beta - 1.0))
    }

    /// φ(θ) = E e^{θ Z(1)} for the per-client net claim process Z.
    pub fn phi(&self, theta: f64) -> Result<f64> {
        Ok(self.log_phi(theta)?.exp())
    }

    /// Fluid limit of the client mass: f̄(t) = f₀ h̄°(t) + λ ∫₀ᵗ h̄(s) ds.
    pub fn fluid_population(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        let fresh = self.sojourn.mean() - self.sojourn.integrated_tail(t);
        self.f0 * self.residual.tail(t) + self.lambda * fresh
    }

    /// Fluid limit of the net aggregate claims: ḡ(t) = (ν m̄ − r) ∫₀ᵗ f̄(s) ds.
    pub fn fluid_claims(&self, t: f64) -> f64 {
        (self.nu * self.mean_claim() - self.r) * self.fluid_population_integral(t)
    }

    /// ∫₀ᵗ f̄(s) ds.
    pub fn fluid_population_integral(&self, t: f64) -> f64 {
        if !(t > 0.0) {
            return 0.0;
        }
        let mut knots = self.sojourn.density_knots();
        knots.extend(self.residual.density_knots());
        if let Some((v, _)) = self.sojourn.atom() {
            knots.push(v);
        }
        quad::integrate_with_knots(|s| self.fluid_population(s), 0.0, t, &knots, 1e-11)
    }

    /// Net profit condition r > m̄ ν: a client is profitable in expectation.
    pub fn net_profit_holds(&self) -> bool {
        self.r > self.mean_claim() * self.nu
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::top_row;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn phi_at_zero_is_one() {
        let p = top_row();
        assert_abs_diff_eq!(p.phi(0.0).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn log_phi_root_at_half() {
        // β(0.5) = 1.5/(1.5−0.5) = 1.5, so log φ(0.5) = −3·0.5 + 3·0.5 = 0.
        let p = top_row();
        assert_abs_diff_eq!(p.log_phi(0.5).unwrap(), 0.0, epsilon = 1e-14);
        // Cross-check by root finding on [0.1, 1.4].
        let mut lo = 0.1;
        let mut hi = 1.4;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if p.log_phi(mid).unwrap() < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert_abs_diff_eq!(0.5 * (lo + hi), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn pure_drift_phi() {
        let p = ModelParams::new(
            0.0,
            1.0,
            0.0,
            1.0,
            Distribution::exponential(1.0).unwrap(),
            Distribution::exponential(1.0).unwrap(),
            Distribution::exponential(1.0).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(p.phi(2.0).unwrap(), (-2.0f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn phi_domain_error_past_abscissa() {
        let p = top_row();
        assert!(p.phi(1.5).is_err());
        assert!(p.phi(2.0).is_err());
        assert!(p.phi(1.5 - 1e-9).is_ok());
    }

    #[test]
    fn fluid_population_equilibrium_is_constant() {
        let p = top_row();
        for t in [0.0, 0.3, 1.0, 2.5, 7.0] {
            assert_abs_diff_eq!(p.fluid_population(t), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn fluid_population_empty_system() {
        let p = ModelParams::new(
            0.0,
            0.0,
            1.0,
            1.0,
            Distribution::exponential(1.0).unwrap(),
            Distribution::exponential(1.0).unwrap(),
            Distribution::exponential(1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(p.fluid_population(3.0), 0.0);
    }

    #[test]
    fn fluid_population_uniform_sojourn() {
        // f₀=0, λ=3, uniform[0,1] sojourn: f̄(2) = 3 ∫₀¹ (1−s) ds = 1.5.
        let p = ModelParams::equilibrium(
            3.0,
            0.0,
            3.0,
            3.0,
            Distribution::exponential(1.5).unwrap(),
            Distribution::uniform(0.0, 1.0).unwrap(),
        )
        .unwrap();
        assert_abs_diff_eq!(p.fluid_population(2.0), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn fluid_claims_drift_examples() {
        // §3.2.2-style parameters: λ=1, f₀=1, μ=1, r=2, νm̄ = 1 ⇒ ḡ(1) = −1.
        let p = ModelParams::new(
            1.0,
            1.0,
            1.0,
            2.0,
            Distribution::exponential(1.0).unwrap(),
            Distribution::exponential(1.0).unwrap(),
            Distribution::exponential(1.0).unwrap(),
        )
        .unwrap();
        assert_abs_diff_eq!(p.fluid_claims(1.0), -1.0, epsilon = 1e-10);

        // Top-row: νm̄ − r = 2 − 3 = −1 and f̄ ≡ 1 ⇒ ḡ(1) = −1.
        let p = top_row();
        assert_abs_diff_eq!(p.fluid_claims(1.0), -1.0, epsilon = 1e-10);
        assert_eq!(p.fluid_claims(0.0), 0.0);

        // Zero net drift.
        let p = ModelParams::new(
            1.0,
            1.0,
            2.0,
            1.0,
            Distribution::exponential(2.0).unwrap(),
            Distribution::exponential(1.0).unwrap(),
            Distribution::exponential(1.0).unwrap(),
        )
        .unwrap();
        assert_abs_diff_eq!(p.fluid_claims(2.0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn net_profit_condition() {
        assert!(top_row().net_profit_holds()); // r=3 > νm̄=2
        let boundary = ModelParams::new(
            1.0,
            1.0,
            1.0,
            1.0,
            Distribution::exponential(1.0).unwrap(),
            Distribution::exponential(1.0).unwrap(),
            Distribution::exponential(1.0).unwrap(),
        )
        .unwrap();
        assert!(!boundary.net_profit_holds()); // r = νm̄: boundary excluded
        let losing = ModelParams::new(
            1.0,
            1.0,
            4.0,
            2.0,
            Distribution::exponential(1.0).unwrap(),
            Distribution::exponential(1.0).unwrap(),
            Distribution::exponential(1.0).unwrap(),
        )
        .unwrap();
        assert!(!losing.net_profit_holds());
    }

    #[test]
    fn densities_integrate_to_one() {
        let laws = [
            Distribution::exponential(1.5).unwrap(),
            Distribution::uniform(0.0, 1.0).unwrap(),
            Distribution::uniform(0.5, 2.0).unwrap(),
            Distribution::gamma(2.0, 3.0).unwrap(),
            Distribution::gamma(1.0, 0.5).unwrap(),
            Distribution::excess_of(Distribution::uniform(0.0, 1.0).unwrap()).unwrap(),
            Distribution::excess_of(Distribution::gamma(2.0, 1.0).unwrap()).unwrap(),
        ];
        for law in &laws {
            let mass = law.mass_weighted(0.0, law.tail_cutoff_point().max(60.0), |_| 1.0);
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn mean_matches_integrated_tail() {
        let laws = [
            Distribution::exponential(0.7).unwrap(),
            Distribution::uniform(0.2, 1.7).unwrap(),
            Distribution::deterministic(1.3).unwrap(),
            Distribution::gamma(2.5, 1.2).unwrap(),
            Distribution::excess_of(Distribution::uniform(0.0, 2.0).unwrap()).unwrap(),
            Distribution::excess_of(Distribution::deterministic(2.0).unwrap()).unwrap(),
        ];
        for law in &laws {
            // mean = ∫₀^∞ tail(t) dt = integrated_tail(0).
            assert_relative_eq!(law.mean(), law.integrated_tail(0.0), epsilon = 1e-6);
            let by_quad = quad::integrate_with_knots(
                |t| law.tail(t),
                0.0,
                law.tail_cutoff_point().max(80.0),
                &law.density_knots(),
                1e-10,
            );
            assert_relative_eq!(law.mean(), by_quad, epsilon = 1e-6);
        }
    }

    #[test]
    fn excess_of_exponential_is_memoryless() {
        let inner = Distribution::exponential(0.8).unwrap();
        let ex = Distribution::excess_of(inner.clone()).unwrap();
        for i in 0..=40 {
            let t = i as f64 * 0.25;
            assert_abs_diff_eq!(ex.density(t), inner.density(t), epsilon = 1e-10);
            assert_abs_diff_eq!(ex.tail(t), inner.tail(t), epsilon = 1e-10);
        }
    }

    #[test]
    fn mgf_at_zero_is_one() {
        let laws = [
            Distribution::exponential(1.5).unwrap(),
            Distribution::uniform(0.0, 2.0).unwrap(),
            Distribution::deterministic(0.4).unwrap(),
            Distribution::gamma(3.0, 2.0).unwrap(),
            Distribution::excess_of(Distribution::uniform(0.0, 1.0).unwrap()).unwrap(),
        ];
        for law in &laws {
            assert_abs_diff_eq!(law.mgf(0.0).unwrap(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mgf_matches_quadrature() {
        let laws = [
            Distribution::exponential(2.0).unwrap(),
            Distribution::uniform(0.3, 1.4).unwrap(),
            Distribution::gamma(2.0, 2.5).unwrap(),
            Distribution::excess_of(Distribution::uniform(0.0, 1.0).unwrap()).unwrap(),
        ];
        for law in &laws {
            for theta in [-1.0, -0.2, 0.15, 0.9] {
                let direct = law.mgf(theta).unwrap();
                let hi = law.tail_cutoff_point().max(100.0);
                let by_quad = law.mass_weighted(0.0, hi, |t| (theta * t).exp());
                assert_relative_eq!(direct, by_quad, epsilon = 1e-8);
                // Derivative against central differences.
                let h = 1e-6;
                let fd =
                    (law.mgf(theta + h).unwrap() - law.mgf(theta - h).unwrap()) / (2.0 * h);
                assert_relative_eq!(law.mgf_deriv(theta).unwrap(), fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn log_phi_is_convex_on_grid() {
        let p = top_row();
        let thetas: Vec<f64> = (-20..14).map(|i| i as f64 * 0.1).collect();
        for w in thetas.windows(3) {
            let (a, m, b) = (w[0], w[1], w[2]);
            let lm = p.log_phi(m).unwrap();
            let avg = 0.5 * (p.log_phi(a).unwrap() + p.log_phi(b).unwrap());
            assert!(lm <= avg + 1e-12, "log phi not convex at {m}");
        }
    }

    #[test]
    fn deterministic_residual_rejected() {
        let res = ModelParams::new(
            1.0,
            1.0,
            1.0,
            2.0,
            Distribution::exponential(1.0).unwrap(),
            Distribution::deterministic(1.0).unwrap(),
            Distribution::deterministic(1.0).unwrap(),
        );
        assert!(res.is_err());
        // Deterministic sojourn with a proper residual is allowed.
        let ok = ModelParams::equilibrium(
            1.0,
            1.0,
            1.0,
            2.0,
            Distribution::exponential(1.0).unwrap(),
            Distribution::deterministic(1.0).unwrap(),
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn excess_of_deterministic_is_uniform() {
        let ex = Distribution::excess_of(Distribution::deterministic(2.0).unwrap()).unwrap();
        let uni = Distribution::uniform(0.0, 2.0).unwrap();
        for i in 0..=20 {
            let t = i as f64 * 0.12;
            assert_abs_diff_eq!(ex.tail(t), uni.tail(t), epsilon = 1e-12);
        }
    }

    #[test]
    fn scaled_to_mean_preserves_family() {
        let e = Distribution::exponential(2.0).unwrap().scaled_to_mean(4.0).unwrap();
        assert_abs_diff_eq!(e.mean(), 4.0, epsilon = 1e-12);
        let u = Distribution::uniform(0.0, 1.0).unwrap().scaled_to_mean(0.25).unwrap();
        assert_abs_diff_eq!(u.mean(), 0.25, epsilon = 1e-12);
        let g = Distribution::gamma(2.0, 1.0).unwrap().scaled_to_mean(1.0).unwrap();
        assert_abs_diff_eq!(g.mean(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn atom_mass_half_open_convention() {
        let d = Distribution::deterministic(1.0).unwrap();
        assert_eq!(d.mass_weighted(0.0, 1.0, |_| 1.0), 1.0); // atom at b included
        assert_eq!(d.mass_weighted(1.0, 2.0, |_| 1.0), 0.0); // atom at a excluded
        assert_eq!(d.tail(1.0), 0.0);
        assert_eq!(d.tail(1.0 - 1e-12), 1.0);
    }
}
