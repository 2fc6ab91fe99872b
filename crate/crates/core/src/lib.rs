//! Large-deviations machinery for the Cramér–Lundberg surplus model with a
//! fluctuating (M/G/∞) client population.
//!
//! Clients arrive at rate λ, stay for an i.i.d. sojourn time, and while
//! present pay premiums at rate r and generate claims at Poisson rate ν.
//! Under the usual many-clients scaling the pair (client mass, net aggregate
//! claims) satisfies a sample-path large-deviation principle, which this
//! crate evaluates numerically:
//!
//! * [`model`] — model parameters, the probability-law catalogue, fluid
//!   limits and the per-client Lévy exponent φ;
//! * [`mgf`] — one-point, multi-point and limiting moment generating
//!   functions of the bivariate process;
//! * [`ratefn`] — Legendre transforms: one-point/multi-point rate functions
//!   and the decomposed sample-path action functional;
//! * [`pathsolver`] — ruin decay rates ρ(t), the all-time decay ρ* with its
//!   optimal horizon t*, and most-likely paths to ruin (dual recovery plus a
//!   direct variational cross-check);
//! * [`attribution`] — how much of a capital fluctuation is driven by the
//!   client count (E₁) versus by the claims themselves (E₂);
//! * [`simulate`] — an exact event-driven Monte Carlo simulator of the
//!   pre-limit model, used as the independent verification oracle;
//! * [`verify`] — the cross-module property suite behind `clruin verify`.

pub mod attribution;
pub mod mgf;
pub mod model;
pub mod opt;
pub mod pathsolver;
pub mod quad;
pub mod ratefn;
pub mod simulate;
pub mod verify;

mod error;
#[cfg(test)]
pub(crate) mod testutil;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
