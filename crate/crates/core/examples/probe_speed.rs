use clruin::model::{Distribution, ModelParams};
use clruin::pathsolver::{decay_rate, recover_path, decay_at_horizon, Horizon};
use clruin::simulate::{estimate_ruin_probability, SimConfig};

fn main() {
    let p = ModelParams::new(
        1.0, 1.0, 3.0, 3.0,
        Distribution::exponential(1.5).unwrap(),
        Distribution::exponential(1.0).unwrap(),
        Distribution::exponential(1.0).unwrap(),
    ).unwrap();

    let t0 = std::time::Instant::now();
    let cfg = SimConfig { n: 40, horizon: 5.0, replications: 100_000, seed: 1, record_grid: vec![] };
    let est = estimate_ruin_probability(&p, &cfg, 0.5).unwrap();
    println!("sim n=40 1e5 reps: p={:.3e} hits={} in {:?}", est.p_hat, est.hits, t0.elapsed());

    let t0 = std::time::Instant::now();
    let rho = decay_at_horizon(&p, 5.0, 3.5).unwrap();
    println!("decay_at_horizon(5, 3.5) = {:.6} (theta*={:.4}) in {:?}", rho.value, rho.theta_star[0], t0.elapsed());

    let t0 = std::time::Instant::now();
    let sol = decay_rate(&p, 5.0, Horizon::Infinite).unwrap();
    println!("decay_rate(5, inf) = {:.6} at t*={:.4} in {:?} ({} scan pts)", sol.rate.value, sol.t_star, t0.elapsed(), sol.scan.len());

    let t0 = std::time::Instant::now();
    let mlp = recover_path(&p, sol.t_star, 0.0, sol.rate.theta_star[0], 64).unwrap();
    println!("recover_path d=64: g(T)={:.6} rate={:.4} in {:?}", mlp.path.g()[64], mlp.rate, t0.elapsed());
}
