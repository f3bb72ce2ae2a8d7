//! Hagedorn wave packets: exact Gaussian dynamics in a quadratic potential.

use fgs::initial::GaussianPacket;
use fgs::observables::{hagedorn_observables, hagedorn_wave};
use fgs::potential::Potential;
use fgs::propagator::{hagedorn_propagate, HagedornState};

fn main() -> fgs::Result<()> {
    let eps = 0.0256;
    let packet = GaussianPacket::new(vec![1.2, 1.4], vec![0.5, -0.3], vec![-0.5, 0.8], eps)?;
    let init = HagedornState::from_packet(&packet);
    // at t = 0 the packet reproduces the initial datum
    let x = [0.45, -0.25];
    println!("u_in(x) = {:.6}, hagedorn(x) = {:.6}", packet.eval(&x)?, hagedorn_wave(&init, eps, &x)?);

    let pot = Potential::harmonic(2);
    for t in [0.5, 1.0, 2.0] {
        let run = hagedorn_propagate(&init, &pot, t, 0.01)?;
        let obs = hagedorn_observables(&run.state)?;
        println!(
            "t = {t}: q_H = {:.5?}, p_H = {:.5?}, max symplectic residual {:.1e}",
            obs.position, obs.momentum, run.max_symplectic_residual
        );
    }
    Ok(())
}
