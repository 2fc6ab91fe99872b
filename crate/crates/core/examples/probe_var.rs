use clruin::model::{Distribution, ModelParams};
use clruin::pathsolver::{decay_at_horizon, recover_path, most_likely_path_variational};

fn main() {
    let p = ModelParams::new(
        1.0, 1.0, 3.0, 3.0,
        Distribution::exponential(1.5).unwrap(),
        Distribution::exponential(1.0).unwrap(),
        Distribution::exponential(1.0).unwrap(),
    ).unwrap();
    for (t, u, d) in [(1.0, 0.5, 64usize), (3.3333, 5.0, 64)] {
        let rho = decay_at_horizon(&p, u, t).unwrap();
        let mlp = recover_path(&p, t, 0.0, rho.theta_star[0], d).unwrap();
        let t0 = std::time::Instant::now();
        let var = most_likely_path_variational(&p, t, u, None, d, Some(&mlp.path)).unwrap();
        let sup: f64 = mlp.path.f().iter().zip(var.path.f()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("t={t} u={u} d={d}: rho={:.5} var={:.5} (gap {:.3}%) sup={:.4} iters={} conv={} in {:?}",
                 rho.value, var.rate, (var.rate/rho.value-1.0)*100.0, sup, var.iterations, var.converged, t0.elapsed());
    }
}
