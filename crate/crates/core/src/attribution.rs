//! Capital-fluctuation attribution: how much of an unusual net-claims value
//! at time T is caused by an unusual client count (E₁) versus unusual
//! claiming by those clients (E₂ = 1 − E₁).
//!
//! The numerator of E₁ integrates the extra clients along the conditioned
//! most likely path, weighted by the expected net capital rate r − m̄ν each
//! client generates:
//!
//! ```text
//! E₁(a, T) = (r − m̄ν) ∫₀ᵀ [f^{(*,T)}(t) − f̄(t)] dt / (ḡ(T) − a).
//! ```
//!
//! As a → ḡ(T) and with exponential(μ) sojourn times, E₁ tends to a ratio of
//! variances with closed-form integrands, evaluated by [`e1_limit_exponential`].

use rayon::prelude::*;

use crate::model::{Distribution, ModelParams};
use crate::pathsolver::{self, MostLikelyPath, RuinQuery};
use crate::quad;
use crate::{Error, Result};

/// Attribution of the capital fluctuation ḡ(T) − a.
#[derive(Debug, Clone)]
pub struct AttributionResult {
    /// Terminal net-claims target.
    pub a: f64,
    pub horizon: f64,
    /// Proportion attributed to client-count fluctuations.
    pub e1: f64,
    /// Proportion attributed to claim fluctuations; e1 + e2 = 1 exactly.
    pub e2: f64,
    /// (r − m̄ν) ∫ (f* − f̄) of Eq. above.
    pub numerator: f64,
    /// ḡ(T) − a.
    pub denominator: f64,
    /// The conditioned most likely path used for the numerator.
    pub path: MostLikelyPath,
}

/// E₁(a, T) through the conditioned most likely path with terminal point
/// {g(T) = a}.
pub fn e1(params: &ModelParams, a: f64, horizon: f64, resolution: usize) -> Result<AttributionResult> {
    if !params.net_profit_holds() {
        return Err(Error::InvalidQuery(
            "attribution requires the net profit condition r > m̄ν".into(),
        ));
    }
    let gbar = params.fluid_claims(horizon);
    let denominator = gbar - a;
    if denominator.abs() < 1e-10 * (1.0 + gbar.abs()) {
        return Err(Error::InvalidQuery(format!(
            "degenerate attribution: a = {a} equals the fluid value {gbar}"
        )));
    }
    let query = RuinQuery::point(a, horizon)?.with_resolution(resolution)?;
    let path = pathsolver::most_likely_path(params, &query)?;

    // Trapezoid of f* − f̄ on the recovered grid.
    let times = path.path.times();
    let mut integral = 0.0;
    for i in 0..times.len() - 1 {
        let h = times[i + 1] - times[i];
        let lo = path.path.f()[i] - path.fluid_f[i];
        let hi = path.path.f()[i + 1] - path.fluid_f[i + 1];
        integral += 0.5 * h * (lo + hi);
    }
    let numerator = (params.r - params.mean_claim() * params.nu) * integral;
    let e1 = numerator / denominator;
    Ok(AttributionResult {
        a,
        horizon,
        e1,
        e2: 1.0 - e1,
        numerator,
        denominator,
        path,
    })
}

/// Closed-form limit of E₁(a, T) as a → ḡ(T) for exponential(μ) sojourn
/// times: a ratio of variances, with the numerator integrating the squared
/// expected capital earned by one extra client arriving at t.
pub fn e1_limit_exponential(params: &ModelParams, horizon: f64) -> Result<f64> {
    let mu = match params.sojourn {
        Distribution::Exponential { rate } => rate,
        _ => {
            return Err(Error::InvalidQuery(
                "the closed-form attribution limit requires exponential sojourn times".into(),
            ))
        }
    };
    if !(horizon > 0.0) {
        return Err(Error::InvalidQuery(format!("horizon must be > 0, got {horizon}")));
    }
    let net_rate = params.r - params.nu * params.mean_claim(); // r − ν β′(0)
    let numerator = quad::integrate(
        |t| {
            let earn = net_rate / mu * (1.0 - (-mu * (horizon - t)).exp());
            (params.lambda + params.fluid_population(t) * mu) * earn * earn
        },
        0.0,
        horizon,
        1e-12,
    );
    let claim_var = params.claim.second_moment()
        * params.nu
        * params.fluid_population_integral(horizon);
    Ok(numerator / (claim_var + numerator))
}

/// E₁ extrapolated to a → ḡ(T): evaluates E₁ at a = ḡ(T) − ε over the given
/// ε ladder and extrapolates to ε = 0 by Lagrange interpolation at zero.
pub fn e1_extrapolated(
    params: &ModelParams,
    horizon: f64,
    epsilons: &[f64],
    resolution: usize,
) -> Result<f64> {
    if epsilons.len() < 2 || epsilons.iter().any(|e| *e <= 0.0) {
        return Err(Error::InvalidQuery("need at least two positive epsilons".into()));
    }
    let gbar = params.fluid_claims(horizon);
    let values: Vec<f64> = epsilons
        .iter()
        .map(|&eps| e1(params, gbar - eps, horizon, resolution).map(|r| r.e1))
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    for i in 0..epsilons.len() {
        let mut weight = 1.0;
        for j in 0..epsilons.len() {
            if i != j {
                weight *= -epsilons[j] / (epsilons[i] - epsilons[j]);
            }
        }
        total += weight * values[i];
    }
    Ok(total)
}

/// One cell of the attribution sweep.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub nu: f64,
    pub a: f64,
    /// E₁(a, T), or the failure message for this cell.
    pub e1: std::result::Result<f64, String>,
    /// Closed-form limit at this ν (exponential sojourn only).
    pub e1_limit: Option<f64>,
}

/// Sweep E₁(a, T) over a ν grid at a fixed product ν m̄ (the claim law is
/// rescaled to mean (ν₀ m̄₀)/ν), for each conditioning value in `a_list`.
/// Per-cell failures are recorded and the sweep continues.
pub fn attribution_sweep(
    params: &ModelParams,
    a_list: &[f64],
    nu_grid: &[f64],
    horizon: f64,
    resolution: usize,
) -> Result<Vec<SweepCell>> {
    let product = params.nu * params.mean_claim();
    let mut jobs: Vec<(f64, f64)> = Vec::new();
    for &nu in nu_grid {
        if !(nu > 0.0) {
            return Err(Error::InvalidQuery(format!("claim rates must be positive, got {nu}")));
        }
        for &a in a_list {
            jobs.push((nu, a));
        }
    }
    let cells: Vec<SweepCell> = jobs
        .par_iter()
        .map(|&(nu, a)| {
            let cell = || -> Result<(f64, Option<f64>)> {
                let mut p = params.clone();
                p.nu = nu;
                p.claim = p.claim.scaled_to_mean(product / nu)?;
                p.validate()?;
                let e1v = e1(&p, a, horizon, resolution)?.e1;
                let limit = e1_limit_exponential(&p, horizon).ok();
                Ok((e1v, limit))
            };
            match cell() {
                Ok((v, limit)) => SweepCell { nu, a, e1: Ok(v), e1_limit: limit },
                Err(err) => SweepCell { nu, a, e1: Err(err.to_string()), e1_limit: None },
            }
        })
        .collect();
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::attribution_row;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn limit_frozen_value_at_unit_rate() {
        // λ=1, f₀=1, μ=1, r=2, ν=1, m̄=1, T=1:
        // numerator = 2 ∫₀¹ (1 − e^{−s})² ds = 2(−1/2 + 2e⁻¹ − e⁻²/2),
        // denominator = 2 + numerator, so E₁ ≈ 0.1438939.
        let p = attribution_row(1.0);
        let v = e1_limit_exponential(&p, 1.0).unwrap();
        let num = 2.0 * (-0.5 + 2.0 * (-1.0f64).exp() - 0.5 * (-2.0f64).exp());
        assert_relative_eq!(v, num / (2.0 + num), epsilon = 1e-10);
        assert_relative_eq!(v, 0.143_902_492_257, epsilon = 1e-9);
    }

    #[test]
    fn limit_rejects_non_exponential_sojourn() {
        let p = crate::testutil::bottom_row();
        assert!(e1_limit_exponential(&p, 1.0).is_err());
    }

    #[test]
    fn limit_approaches_one_with_deterministic_micro_claims() {
        // Tiny deterministic claims at high rate: claim variance vanishes
        // relative to client-count variance.
        let mut p = attribution_row(256.0);
        p.claim = Distribution::deterministic(1.0 / 256.0).unwrap();
        let v = e1_limit_exponential(&p, 1.0).unwrap();
        assert!(v > 0.97, "E1 limit {v} should approach 1");
    }

    #[test]
    fn limit_vanishes_at_the_net_profit_boundary() {
        let mut p = attribution_row(1.0);
        p.r = 1.0; // r = νm̄: the per-client net rate is zero
        let v = e1_limit_exponential(&p, 1.0).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn e1_decomposition_sums_to_one_and_sits_in_unit_interval() {
        let p = attribution_row(1.0);
        let res = e1(&p, -1.4, 1.0, 24).unwrap();
        assert_eq!(res.e1 + res.e2, 1.0);
        assert!(res.e1 > 0.0 && res.e1 < 1.0, "E1 = {}", res.e1);
        // Terminal consistency of the conditioned path.
        let d = res.path.path.len() - 1;
        assert_abs_diff_eq!(res.path.path.g()[d], -1.4, epsilon = 1e-6);
    }

    #[test]
    fn e1_converges_to_the_exponential_limit() {
        let p = attribution_row(1.0);
        let limit = e1_limit_exponential(&p, 1.0).unwrap();
        let extrapolated = e1_extrapolated(&p, 1.0, &[0.2, 0.1, 0.05], 32).unwrap();
        assert_relative_eq!(extrapolated, limit, epsilon = 0.05);
    }

    #[test]
    fn guaranteed_sign_regime_and_its_breakdown() {
        // For a < ḡ(T) under net profit, E₁ ∈ [0, 1]. For a > 0 no sign
        // guarantee survives; here the conditioned path runs below fluid
        // (negative numerator) while the denominator also flips.
        let p = attribution_row(1.0);
        for a in [-1.2, -1.5, -2.0] {
            let res = e1(&p, a, 1.0, 24).unwrap();
            assert!(res.e1 >= 0.0 && res.e1 <= 1.0, "E1({a}) = {} outside [0,1]", res.e1);
        }
        let res = e1(&p, 0.5, 1.0, 24).unwrap();
        assert!(res.e1.is_finite());
        assert!(res.numerator < 0.0, "path above fluid for a > 0? {}", res.numerator);
    }

    #[test]
    fn sweep_records_cells_and_limit_column() {
        let p = attribution_row(1.0);
        let cells = attribution_sweep(&p, &[-1.5, 0.0], &[0.5, 2.0], 1.0, 16).unwrap();
        assert_eq!(cells.len(), 4);
        for cell in &cells {
            let e1v = cell.e1.as_ref().expect("cell should succeed");
            assert!(e1v.is_finite());
            let limit = cell.e1_limit.expect("exponential sojourn has a limit");
            assert!(limit > 0.0 && limit < 1.0);
        }
        // Lower a gives higher E1 at fixed ν.
        let low_a = cells.iter().find(|c| c.nu == 2.0 && c.a == -1.5).unwrap();
        let high_a = cells.iter().find(|c| c.nu == 2.0 && c.a == 0.0).unwrap();
        assert!(
            low_a.e1.as_ref().unwrap() > high_a.e1.as_ref().unwrap(),
            "E1 should grow as a decreases"
        );
    }
}
