//! Propagate one frozen Gaussian trajectory and watch the conserved
//! quantities of the flow.

use fgs::potential::Potential;
use fgs::propagator::{continue_trajectory, propagate_trajectory};
use fgs::PhasePoint;
use num_complex::Complex64;

fn main() -> fgs::Result<()> {
    let pot = Potential::torsion(2);
    let z0 = PhasePoint::new(vec![0.3, -0.8], vec![1.0, 0.4])?;
    let mut st = propagate_trajectory(&z0, Complex64::new(1.0, 0.0), &pot, 0.0, 0.01)?;
    let h0 = st.energy(&pot);
    println!("{:>5} {:>9} {:>9} {:>10} {:>10} {:>10}", "t", "Q1", "P1", "|A|", "dH", "symp");
    for k in 1..=10 {
        st = continue_trajectory(&st, &pot, 0.5 * k as f64, 0.01)?;
        println!(
            "{:>5.2} {:>9.5} {:>9.5} {:>10.6} {:>10.2e} {:>10.2e}",
            st.t,
            st.q[0],
            st.p[0],
            st.a.norm(),
            st.energy(&pot) - h0,
            st.symplectic_residual()
        );
    }
    Ok(())
}
