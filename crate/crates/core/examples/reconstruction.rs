//! Reconstruct a propagated wave field from an FGS ensemble and measure its
//! distance to a large-sample reference.

use fgs::metrics::{fgs_field, reference_field, Setup};
use fgs::potential::Potential;
use fgs::reconstruction::density_field;
use fgs::StreamKey;

fn main() -> fgs::Result<()> {
    let setup = Setup::gaussian_1d("E2", Potential::torsion(1), 0.0256)?;
    let key = StreamKey::new(3);
    let reference = reference_field(&setup, 50_000, &key.child(u64::MAX))?;
    let norm = reference.l2_norm();
    for m in [100, 400, 1600, 6400] {
        let f = fgs_field(&setup, m, &key.child(m as u64))?;
        let err = f.field.l2_distance(&reference)?;
        println!("M = {m:>5}: |u_M - u_ref| = {err:.4e}  (|u_ref| = {norm:.4})");
    }
    let rho = density_field(&reference);
    let (imax, _) = rho.values.iter().enumerate().fold((0, 0.0), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    println!("density peak at x = {:.4}", rho.grid.point(imax)[0]);
    Ok(())
}
