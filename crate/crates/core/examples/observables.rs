//! Mesh-free position and momentum expectations in six dimensions, checked
//! against the Hagedorn packet for the harmonic oscillator.

use fgs::metrics::ObservableSetup;
use fgs::observables::{hagedorn_observables, observables_with, ObservableOptions, PairSum};
use fgs::potential::Potential;
use fgs::propagator::{hagedorn_propagate, propagate_ensemble, HagedornState};
use fgs::sampler::{sample, DensityDescriptor};
use fgs::StreamKey;

fn main() -> fgs::Result<()> {
    let setup = ObservableSetup::new(6);
    let packet = setup.packet()?;
    let pot = Potential::harmonic(6);
    let exact = hagedorn_observables(&hagedorn_propagate(&HagedornState::from_packet(&packet), &pot, 0.5, 0.01)?.state)?;

    let ens = sample(&DensityDescriptor::gaussian(packet), 6400, &StreamKey::new(1))?;
    let trajs = propagate_ensemble(&ens, &ens.initial_amplitudes()?, &pot, 0.5, 0.01)?;
    let opts = ObservableOptions { screen: true, mode: PairSum::HermitianHalf };
    let obs = observables_with(&trajs, &ens.density_values, setup.epsilon, opts)?;

    println!("norm^2 estimate {:.4}", obs.position.norm_sq);
    // raw sums carry the finite-M norm; dividing by it removes most of the bias
    println!("{:>3} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}", "a", "x raw", "x norm", "q_H", "p raw", "p norm", "p_H");
    for a in 0..6 {
        println!(
            "{:>3} {:>9.5} {:>9.5} {:>9.5} {:>9.5} {:>9.5} {:>9.5}",
            a + 1,
            obs.position.raw[a].re,
            obs.position.normalized[a],
            exact.position[a],
            obs.momentum.raw[a].re,
            obs.momentum.normalized[a],
            exact.momentum[a]
        );
    }
    Ok(())
}
