use clruin::mgf::{self, DualVector, TimeGrid};
use clruin::model::{Distribution, ModelParams};
use rand::{Rng, SeedableRng};

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
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0x5EED);
    let mut worst = (0.0f64, 0.0, 0.0, 0.0, false);
    for _ in 0..100 {
        let t = rng.gen_range(0.2..3.0);
        let omega = rng.gen_range(-1.0..1.0);
        let theta = rng.gen_range(-1.0..(0.55f64 * 1.5).min(1.0));
        let grid = TimeGrid::single(t).unwrap();
        let duals = DualVector::new(vec![omega], vec![theta]).unwrap();
        let gm = (mgf::m_minus_multi(&p, &grid, &duals).unwrap()
            - mgf::m_minus_one(&p, t, omega, theta).unwrap())
        .abs();
        let gp = (mgf::m_plus_multi(&p, &grid, &duals).unwrap()
            - mgf::m_plus_one(&p, t, omega, theta).unwrap())
        .abs();
        if gm.max(gp) > worst.0 {
            worst = (gm.max(gp), t, omega, theta, gp > gm);
        }
    }
    let (gap, t, omega, theta, plus_side) = worst;
    println!("worst gap {gap:.3e} at t={t} omega={omega} theta={theta} plus_side={plus_side}");
    let one = mgf::m_plus_one(&p, t, omega, theta).unwrap();
    let grid = TimeGrid::single(t).unwrap();
    let duals = DualVector::new(vec![omega], vec![theta]).unwrap();
    let multi = mgf::m_plus_multi(&p, &grid, &duals).unwrap();
    println!("m_plus one={one:.15e}  multi={multi:.15e}");
    let mone = mgf::m_minus_one(&p, t, omega, theta).unwrap();
    let mmulti = mgf::m_minus_multi(&p, &grid, &duals).unwrap();
    println!("m_minus one={mone:.15e} multi={mmulti:.15e}");
}
