//! Shared test fixtures: the two experiment configurations used throughout
//! the test suites.

use crate::model::{Distribution, ModelParams};

/// ν=3, r=3, exponential claims with mean 2/3, λ=1, f₀=1, exponential(1)
/// sojourn and residual. The population starts in equilibrium, so f̄ ≡ 1.
pub(crate) fn top_row() -> ModelParams {
    ModelParams::new(
        1.0,
        1.0,
        3.0,
        3.0,
        Distribution::exponential(1.5).unwrap(),
        Distribution::exponential(1.0).unwrap(),
        Distribution::exponential(1.0).unwrap(),
    )
    .unwrap()
}

/// f₀=0, λ=3, uniform[0,1] sojourn with its excess residual, same claim side
/// as [`top_row`].
pub(crate) fn bottom_row() -> ModelParams {
    ModelParams::equilibrium(
        3.0,
        0.0,
        3.0,
        3.0,
        Distribution::exponential(1.5).unwrap(),
        Distribution::uniform(0.0, 1.0).unwrap(),
    )
    .unwrap()
}

/// Attribution experiment: λ=1, f₀=1, exponential(1) sojourn (μ=1), r=2 and
/// exponential claims with ν m̄ = 1.
pub(crate) fn attribution_row(nu: f64) -> ModelParams {
    ModelParams::new(
        1.0,
        1.0,
        nu,
        2.0,
        Distribution::exponential_mean(1.0 / nu).unwrap(),
        Distribution::exponential(1.0).unwrap(),
        Distribution::exponential(1.0).unwrap(),
    )
    .unwrap()
}
