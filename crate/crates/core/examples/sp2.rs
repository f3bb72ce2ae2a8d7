//! Strang splitting reference: a free packet against its closed form and
//! the second-order convergence in the time step.

use fgs::initial::GaussianPacket;
use fgs::potential::Potential;
use fgs::reference::{exact_free_gaussian, sp2_solve, PeriodicGrid, Sp2Config};
use fgs::WaveField;

fn main() -> fgs::Result<()> {
    let eps = 0.05;
    let packet = GaussianPacket::new(vec![1.0], vec![0.5], vec![-0.5], eps)?;
    let grid = PeriodicGrid::centered(1, 512)?;
    let u0 = WaveField::from_fn(grid.grid_spec(), |x| packet.eval(x).unwrap());

    let free = sp2_solve(&u0, &Sp2Config::new(grid.clone(), 0.05, eps, Potential::null(1))?, 1.0)?;
    let exact = WaveField::from_fn(grid.grid_spec(), |x| exact_free_gaussian(&packet, 1.0, x).unwrap());
    println!("free packet at t = 1: L2 error {:.2e}", free.l2_distance(&exact)?);

    let run = |dt| sp2_solve(&u0, &Sp2Config::new(grid.clone(), dt, eps, Potential::harmonic(1)).unwrap(), 0.5);
    let fine = run(1e-4)?;
    for dt in [0.04, 0.02, 0.01] {
        let u = run(dt)?;
        println!("harmonic, dt = {dt}: error {:.3e}, norm {:.15}", u.l2_distance(&fine)?, u.l2_norm());
    }
    Ok(())
}
