//! Cross-module property suite: the checks behind `clruin verify`.
//!
//! Each check exercises an identity or oracle pairing between independently
//! implemented routes (one-point vs multi-point mgfs, dual recovery vs the
//! direct variational solver, large-deviation rates vs Monte Carlo), plus
//! the module invariants that keep the numerics honest.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::mgf::{self, DualFunction, DualVector, TimeGrid};
use crate::model::ModelParams;
use crate::pathsolver::{self, Horizon};
use crate::ratefn::{self, PathGrid};
use crate::simulate::{self, SimConfig};
use crate::Result;

/// Outcome of one named check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckReport {
    fn pass(name: &str, detail: String) -> Self {
        CheckReport { name: name.into(), passed: true, detail }
    }

    fn fail(name: &str, detail: String) -> Self {
        CheckReport { name: name.into(), passed: false, detail }
    }

    fn from_error(name: &str, err: crate::Error) -> Self {
        CheckReport { name: name.into(), passed: false, detail: format!("error: {err}") }
    }
}

/// Options for the verification run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Replications per Monte Carlo cell in the LDP cross-check.
    pub mc_replications: u64,
    /// Scaling parameters for the LDP cross-check regression.
    pub mc_n_list: Vec<u32>,
    /// Skip the Monte Carlo checks (property-only run).
    pub skip_monte_carlo: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0x5EED,
            mc_replications: 200_000,
            mc_n_list: vec![5, 10, 20],
            skip_monte_carlo: false,
        }
    }
}

/// Run every check against the given model. Failures never abort the suite.
pub fn run_all(params: &ModelParams, opts: &VerifyOptions) -> Vec<CheckReport> {
    let mut reports = vec![
        mgf_normalization(params),
        mgf_d1_equivalence(params, opts.seed),
        grid_refinement(params, opts.seed),
        log_n_convexity(params, opts.seed),
        fluid_zero_rate(params),
        k_local_mean_rate(params),
        rate_convexity(params, opts.seed),
        two_solver_agreement(params),
    ];
    if !opts.skip_monte_carlo {
        reports.push(sim_conservation(params, opts));
        reports.push(equilibrium_occupancy(params, opts));
        reports.push(mc_vs_ldp(params, opts));
    }
    reports
}

fn random_time(rng: &mut ChaCha12Rng) -> f64 {
    rng.gen_range(0.2..3.0)
}

/// Draw (t, ω, θ) with |log φ(θ)|·t ≤ 1.5, keeping the mgf values at O(1)
/// scale where an absolute 1e-10 agreement target is meaningful.
pub(crate) fn random_case(params: &ModelParams, rng: &mut ChaCha12Rng) -> (f64, f64, f64) {
    let cap = params.theta_max();
    let hi = (0.55 * cap).min(1.0);
    loop {
        let t = random_time(rng);
        let omega = rng.gen_range(-1.0..1.0);
        let theta = rng.gen_range(-1.0..hi);
        if let Ok(lphi) = params.log_phi(theta) {
            if lphi.abs() * t <= 1.5 {
                return (t, omega, theta);
            }
        }
    }
}

fn random_duals(params: &ModelParams, rng: &mut ChaCha12Rng) -> (f64, f64) {
    let cap = params.theta_max();
    let hi = (0.55 * cap).min(1.0);
    (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..hi))
}

fn mgf_normalization(params: &ModelParams) -> CheckReport {
    const NAME: &str = "mgf_normalization";
    let run = || -> Result<f64> {
        let mut worst: f64 = 0.0;
        for t in [0.4, 1.0, 2.7] {
            worst = worst.max((mgf::m_minus_one(params, t, 0.0, 0.0)? - 1.0).abs());
            worst = worst.max((mgf::m_plus_one(params, t, 0.0, 0.0)? - 1.0).abs());
        }
        let grid = TimeGrid::new(vec![0.5, 1.1, 2.0])?;
        let zeros = DualVector::zeros(3);
        worst = worst.max((mgf::m_minus_multi(params, &grid, &zeros)? - 1.0).abs());
        worst = worst.max((mgf::m_plus_multi(params, &grid, &zeros)? - 1.0).abs());
        let flat = DualFunction::from_fns(2.0, 256, |_| 0.0, |_| 0.0)?;
        worst = worst.max((mgf::m_minus_limit(params, &flat)? - 1.0).abs());
        worst = worst.max((mgf::m_plus_limit(params, &flat)? - 1.0).abs());
        Ok(worst)
    };
    match run() {
        Ok(worst) if worst < 1e-9 => {
            CheckReport::pass(NAME, format!("max |mgf(0) - 1| = {worst:.2e}"))
        }
        Ok(worst) => CheckReport::fail(NAME, format!("max |mgf(0) - 1| = {worst:.2e} >= 1e-9")),
        Err(err) => CheckReport::from_error(NAME, err),
    }
}

fn mgf_d1_equivalence(params: &ModelParams, seed: u64) -> CheckReport {
    const NAME: &str = "mgf_d1_equivalence";
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let run = |rng: &mut ChaCha12Rng| -> Result<f64> {
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let (t, omega, theta) = random_case(params, rng);
            let grid = TimeGrid::single(t)?;
            let duals = DualVector::new(vec![omega], vec![theta])?;
            let minus = (mgf::m_minus_multi(params, &grid, &duals)?
                - mgf::m_minus_one(params, t, omega, theta)?)
            .abs();
            let plus = (mgf::m_plus_multi(params, &grid, &duals)?
                - mgf::m_plus_one(params, t, omega, theta)?)
            .abs();
            worst = worst.max(minus).max(plus);
        }
        Ok(worst)
    };
    match run(&mut rng) {
        Ok(worst) if worst < 1e-10 => {
            CheckReport::pass(NAME, format!("100-case sweep, max gap {worst:.2e}"))
        }
        Ok(worst) => CheckReport::fail(NAME, format!("max one-vs-multi gap {worst:.2e} >= 1e-10")),
        Err(err) => CheckReport::from_error(NAME, err),
    }
}

fn grid_refinement(params: &ModelParams, seed: u64) -> CheckReport {
    const NAME: &str = "grid_refinement";
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x11);
    let run = |rng: &mut ChaCha12Rng| -> Result<f64> {
        let mut worst: f64 = 0.0;
        let mut cases = 0;
        while cases < 20 {
            let t1 = rng.gen_range(0.3..1.2);
            let t2 = t1 + rng.gen_range(0.4..1.5);
            let extra = rng.gen_range(t1 + 0.05..t2 - 0.05);
            let (w1, th1) = random_duals(params, rng);
            let (w2, th2) = {
                let (a, b) = random_duals(params, rng);
                (0.5 * a, 0.5 * b)
            };
            // Same scale conditioning as the d=1 sweep.
            let suffixes = [th1 + th2, th2];
            if suffixes.iter().any(|&th| {
                params.log_phi(th).map(|l| l.abs() * t2 > 1.5).unwrap_or(true)
            }) {
                continue;
            }
            cases += 1;
            let coarse_grid = TimeGrid::new(vec![t1, t2])?;
            let coarse = DualVector::new(vec![w1, w2], vec![th1, th2])?;
            let fine_grid = TimeGrid::new(vec![t1, extra, t2])?;
            let fine = DualVector::new(vec![w1, 0.0, w2], vec![th1, 0.0, th2])?;
            worst = worst.max(
                (mgf::m_minus_multi(params, &coarse_grid, &coarse)?
                    - mgf::m_minus_multi(params, &fine_grid, &fine)?)
                .abs(),
            );
            worst = worst.max(
                (mgf::m_plus_multi(params, &coarse_grid, &coarse)?
                    - mgf::m_plus_multi(params, &fine_grid, &fine)?)
                .abs(),
            );
        }
        Ok(worst)
    };
    match run(&mut rng) {
        Ok(worst) if worst < 1e-9 => {
            CheckReport::pass(NAME, format!("zero-dual insertion, max gap {worst:.2e}"))
        }
        Ok(worst) => CheckReport::fail(NAME, format!("refinement gap {worst:.2e} >= 1e-9")),
        Err(err) => CheckReport::from_error(NAME, err),
    }
}

fn log_n_convexity(params: &ModelParams, seed: u64) -> CheckReport {
    const NAME: &str = "log_n_convexity";
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x22);
    let run = |rng: &mut ChaCha12Rng| -> Result<f64> {
        let grid = TimeGrid::new(vec![0.6, 1.4])?;
        let mut worst: f64 = f64::NEG_INFINITY;
        for _ in 0..30 {
            let draw = |rng: &mut ChaCha12Rng| {
                let (w1, t1) = random_duals(params, rng);
                let (w2, t2) = random_duals(params, rng);
                DualVector::new(vec![w1, w2], vec![0.5 * t1, 0.5 * t2]).unwrap()
            };
            let a = draw(rng);
            let b = draw(rng);
            let mid = DualVector::new(
                a.omega.iter().zip(&b.omega).map(|(x, y)| 0.5 * (x + y)).collect(),
                a.theta.iter().zip(&b.theta).map(|(x, y)| 0.5 * (x + y)).collect(),
            )?;
            let gap = mgf::log_n(params, &grid, &mid)?
                - 0.5 * (mgf::log_n(params, &grid, &a)? + mgf::log_n(params, &grid, &b)?);
            worst = worst.max(gap);
        }
        Ok(worst)
    };
    match run(&mut rng) {
        Ok(worst) if worst <= 1e-9 => {
            CheckReport::pass(NAME, format!("max midpoint excess {worst:.2e}"))
        }
        Ok(worst) => CheckReport::fail(NAME, format!("midpoint excess {worst:.2e} > 1e-9")),
        Err(err) => CheckReport::from_error(NAME, err),
    }
}

fn fluid_zero_rate(params: &ModelParams) -> CheckReport {
    const NAME: &str = "fluid_zero_rate";
    let run = || -> Result<(f64, f64)> {
        let mut worst_point: f64 = 0.0;
        for t in [0.8, 1.6] {
            let res =
                ratefn::rate_one_point(params, t, params.fluid_population(t), params.fluid_claims(t))?;
            worst_point = worst_point.max(res.value.abs());
        }
        let horizon = 2.5;
        let path = PathGrid::from_fns(
            horizon,
            128,
            |t| params.fluid_population(t),
            |t| params.fluid_claims(t),
        )?;
        let sample = ratefn::rate_sample_path(params, &path)?;
        Ok((worst_point, sample.value))
    };
    match run() {
        Ok((point, sample)) if point < 1e-6 && sample < 1e-6 => CheckReport::pass(
            NAME,
            format!("one-point {point:.2e}, sample-path {sample:.2e}"),
        ),
        Ok((point, sample)) => CheckReport::fail(
            NAME,
            format!("one-point {point:.2e} / sample-path {sample:.2e} >= 1e-6"),
        ),
        Err(err) => CheckReport::from_error(NAME, err),
    }
}

fn k_local_mean_rate(params: &ModelParams) -> CheckReport {
    const NAME: &str = "k_local_mean_rate";
    let run = || -> Result<(f64, f64)> {
        let drift = params.nu * params.mean_claim() - params.r;
        let mut worst_zero: f64 = 0.0;
        let mut worst_positive = f64::INFINITY;
        for x in [0.4, 1.0, 2.0] {
            worst_zero = worst_zero.max(ratefn::k_local(params, x, x * drift)?.abs());
            worst_positive = worst_positive
                .min(ratefn::k_local(params, x, x * drift + 0.25)?)
                .min(ratefn::k_local(params, x, x * drift - 0.25)?);
        }
        Ok((worst_zero, worst_positive))
    };
    match run() {
        Ok((zero, positive)) if zero < 1e-12 && positive > 0.0 => CheckReport::pass(
            NAME,
            format!("K at mean rate {zero:.2e}; off-mean minimum {positive:.2e}"),
        ),
        Ok((zero, positive)) => CheckReport::fail(
            NAME,
            format!("K at mean rate {zero:.2e} (want < 1e-12), off-mean min {positive:.2e}"),
        ),
        Err(err) => CheckReport::from_error(NAME, err),
    }
}

fn rate_convexity(params: &ModelParams, seed: u64) -> CheckReport {
    const NAME: &str = "rate_convexity";
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x33);
    let run = |rng: &mut ChaCha12Rng| -> Result<f64> {
        let t = 1.2;
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..8 {
            let f1 = rng.gen_range(0.3..2.0);
            let f2 = rng.gen_range(0.3..2.0);
            let g1 = rng.gen_range(-1.5..0.5);
            let g2 = rng.gen_range(-1.5..0.5);
            let v1 = ratefn::rate_one_point(params, t, f1, g1)?.value;
            let v2 = ratefn::rate_one_point(params, t, f2, g2)?.value;
            let vm =
                ratefn::rate_one_point(params, t, 0.5 * (f1 + f2), 0.5 * (g1 + g2))?.value;
            worst = worst.max(vm - 0.5 * (v1 + v2));
        }
        Ok(worst)
    };
    match run(&mut rng) {
        Ok(worst) if worst <= 1e-7 => {
            CheckReport::pass(NAME, format!("max midpoint excess {worst:.2e}"))
        }
        Ok(worst) => CheckReport::fail(NAME, format!("midpoint excess {worst:.2e} > 1e-7")),
        Err(err) => CheckReport::from_error(NAME, err),
    }
}

fn two_solver_agreement(params: &ModelParams) -> CheckReport {
    const NAME: &str = "two_solver_agreement";
    let run = || -> Result<Option<(f64, f64, f64)>> {
        let u = 0.5;
        let t = 1.0;
        let rho = pathsolver::decay_at_horizon(params, u, t)?;
        if rho.unbounded || rho.value == 0.0 {
            return Ok(None);
        }
        let d = 64;
        let recovered = pathsolver::recover_path(params, t, 0.0, rho.theta_star[0], d)?;
        let var =
            pathsolver::most_likely_path_variational(params, t, u, None, d, Some(&recovered.path))?;
        let rate_gap = (var.rate - rho.value).abs() / rho.value;
        let scale = recovered.path.f().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
        let sup = recovered
            .path
            .f()
            .iter()
            .zip(var.path.f())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / scale;
        Ok(Some((rho.value, rate_gap, sup)))
    };
    match run() {
        Ok(None) => CheckReport::pass(
            NAME,
            "skipped: ruin level trivially or never reachable for this model".into(),
        ),
        Ok(Some((rho, rate_gap, sup))) if rate_gap <= 0.02 && sup <= 0.05 => CheckReport::pass(
            NAME,
            format!("rho {rho:.4}: rate gap {:.2}%, path sup {:.2}%", rate_gap * 100.0, sup * 100.0),
        ),
        Ok(Some((rho, rate_gap, sup))) => CheckReport::fail(
            NAME,
            format!(
                "rho {rho:.4}: rate gap {:.2}% (cap 2%), path sup {:.2}% (cap 5%)",
                rate_gap * 100.0,
                sup * 100.0
            ),
        ),
        Err(err) => CheckReport::from_error(NAME, err),
    }
}

fn sim_conservation(params: &ModelParams, opts: &VerifyOptions) -> CheckReport {
    const NAME: &str = "sim_conservation";
    let run = || -> Result<f64> {
        let config = SimConfig {
            n: 20,
            horizon: 2.0,
            replications: 1,
            seed: opts.seed,
            record_grid: vec![0.5, 1.0, 2.0],
        };
        let mut worst: f64 = 0.0;
        for idx in 0..50 {
            let traj = simulate::sample_trajectory(params, &config, idx, Some(0.5))?;
            worst = worst.max(traj.conservation_gap);
        }
        Ok(worst)
    };
    match run() {
        Ok(worst) if worst < 1e-9 => {
            CheckReport::pass(NAME, format!("max bookkeeping gap {worst:.2e}"))
        }
        Ok(worst) => CheckReport::fail(NAME, format!("bookkeeping gap {worst:.2e} >= 1e-9")),
        Err(err) => CheckReport::from_error(NAME, err),
    }
}

fn equilibrium_occupancy(params: &ModelParams, opts: &VerifyOptions) -> CheckReport {
    const NAME: &str = "equilibrium_occupancy";
    let run = || -> Result<f64> {
        // Stationary variant of the model: residual = excess lifetime and
        // f₀ = λ E[sojourn], making F_n(t) Poisson(n f₀) at every t.
        let lambda = if params.lambda > 0.0 { params.lambda } else { 1.0 };
        let f0 = lambda * params.sojourn.mean();
        let eq = ModelParams::equilibrium(
            lambda,
            f0,
            params.nu,
            params.r,
            params.claim.clone(),
            params.sojourn.clone(),
        )?;
        let n = 20u32;
        let config = SimConfig {
            n,
            horizon: 2.0 * params.sojourn.mean(),
            replications: 4000,
            seed: opts.seed ^ 0xE0,
            record_grid: vec![2.0 * params.sojourn.mean()],
        };
        let hist = simulate::occupancy_histogram(&eq, &config, 0)?;
        simulate::poisson_chi_square_pvalue(&hist, n as f64 * f0)
    };
    match run() {
        Ok(p) if p > 0.01 => CheckReport::pass(NAME, format!("chi-square p-value {p:.3}")),
        Ok(p) => CheckReport::fail(NAME, format!("chi-square p-value {p:.4} <= 0.01")),
        Err(err) => CheckReport::from_error(NAME, err),
    }
}

fn mc_vs_ldp(params: &ModelParams, opts: &VerifyOptions) -> CheckReport {
    const NAME: &str = "mc_vs_ldp";
    let run = || -> Result<Option<(f64, f64, f64)>> {
        let u = 0.5;
        let horizon = 5.0;
        let ldp = pathsolver::decay_rate(params, u, Horizon::Finite(horizon))?;
        if ldp.rate.unbounded || ldp.rate.value <= 0.0 {
            return Ok(None);
        }
        let base = SimConfig {
            n: 1,
            horizon,
            replications: opts.mc_replications,
            seed: opts.seed ^ 0x3C,
            record_grid: Vec::new(),
        };
        let decay = simulate::empirical_decay(params, &base, u, &opts.mc_n_list)?;
        let gap = (decay.slope - ldp.rate.value).abs() / ldp.rate.value;
        Ok(Some((ldp.rate.value, decay.slope, gap)))
    };
    match run() {
        Ok(None) => CheckReport::pass(NAME, "skipped: decay rate degenerate for this model".into()),
        Ok(Some((rho, slope, gap))) if gap <= 0.25 => CheckReport::pass(
            NAME,
            format!("LDP {rho:.4} vs MC slope {slope:.4} (gap {:.1}%)", gap * 100.0),
        ),
        Ok(Some((rho, slope, gap))) => CheckReport::fail(
            NAME,
            format!("LDP {rho:.4} vs MC slope {slope:.4}: gap {:.1}% > 25%", gap * 100.0),
        ),
        Err(err) => CheckReport::from_error(NAME, err),
    }
}
