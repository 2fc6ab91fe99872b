use clruin::model::{Distribution, ModelParams};
use clruin::ratefn::{rate_f, PathGrid};

fn main() {
    let p = ModelParams::new(
        1.0, 1.0, 3.0, 3.0,
        Distribution::exponential(1.5).unwrap(),
        Distribution::exponential(1.0).unwrap(),
        Distribution::exponential(1.0).unwrap(),
    ).unwrap();
    for n in [32usize, 48, 64, 96, 128, 192, 256] {
        let path = PathGrid::from_fns(3.0, n, |t| p.fluid_population(t), |_| 0.0).unwrap();
        let t0 = std::time::Instant::now();
        let res = rate_f(&p, &path).unwrap();
        println!("n={n:4}  value={:.3e}  iters={}  gnorm={:.2e}  {:?}", res.value, res.iterations, res.grad_norm, t0.elapsed());
    }
}
