//! Write a wave field in the FGSF binary format and read it back.

use fgs::field_io::{load_field, save_field};
use fgs::{GridSpec, WaveField};
use num_complex::Complex64;

fn main() -> fgs::Result<()> {
    let grid = GridSpec::cube(2, -1.0, 1.0, 65)?;
    let f = WaveField::from_fn(grid, |x| Complex64::from_polar((-(x[0] * x[0] + x[1] * x[1])).exp(), 3.0 * x[0]));
    let path = std::env::temp_dir().join("fgs-example.fgsf");
    save_field(&path, &f)?;
    let back = load_field(&path)?;
    assert_eq!(back, f);
    println!("{} bytes, {} values, roundtrip exact", std::fs::metadata(&path)?.len(), back.values().len());
    std::fs::remove_file(path)?;
    Ok(())
}
