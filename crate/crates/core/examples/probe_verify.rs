use clruin::model::{Distribution, ModelParams};
use clruin::verify::{run_all, VerifyOptions};

fn main() {
    let p = ModelParams::new(
        1.0,
        1.0,
        3.0,
        3.0,
        Distribution::exponential(1.5).unwrap(),
        Distribution::exponential(1.0).unwrap(),
        Distribution::exponential(1.0).unwrap(),
    )
    .unwrap();
    let opts = VerifyOptions { skip_monte_carlo: true, ..Default::default() };
    let t0 = std::time::Instant::now();
    for r in run_all(&p, &opts) {
        println!(
            "[{}] {} - {} ({:?} cumulative)",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail,
            t0.elapsed()
        );
    }
}
