//! Binary wave-field files.
//!
//! Layout, all little-endian: magic `FGSF`, version `u64`, dimension `m: u64`,
//! `m` lower bounds `f64`, `m` upper bounds `f64`, `m` point counts `u64`,
//! then `(re, im)` pairs of `f64` in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{FgsError, Result};
use crate::grid::{GridSpec, WaveField};

pub const MAGIC: &[u8; 4] = b"FGSF";
pub const VERSION: u64 = 1;

pub fn write_field<W: Write>(mut w: W, field: &WaveField) -> Result<()> {
    let grid = field.grid();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(grid.dim() as u64).to_le_bytes())?;
    for v in grid.lower().iter().chain(grid.upper()) {
        w.write_all(&v.to_le_bytes())?;
    }
    for &n in grid.points_per_axis() {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    for v in field.values() {
        w.write_all(&v.re.to_le_bytes())?;
        w.write_all(&v.im.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_field<R: Read>(mut r: R) -> Result<WaveField> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(FgsError::FieldFormat("bad magic".into()));
    }
    let version = read_u64(&mut r)?;
    if version != VERSION {
        return Err(FgsError::FieldFormat(format!("unsupported version {version}")));
    }
    let m = read_u64(&mut r)? as usize;
    if m == 0 || m > 16 {
        return Err(FgsError::FieldFormat(format!("implausible dimension {m}")));
    }
    let lower = (0..m).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
    let upper = (0..m).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
    let points = (0..m).map(|_| read_u64(&mut r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let grid = GridSpec::new(lower, upper, points).map_err(|e| FgsError::FieldFormat(e.to_string()))?;
    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        let re = read_f64(&mut r)?;
        let im = read_f64(&mut r)?;
        values.push(Complex64::new(re, im));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(FgsError::FieldFormat("trailing bytes after field data".into()));
    }
    WaveField::new(grid, values)
}

pub fn save_field(path: &Path, field: &WaveField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field(&mut w, field)?;
    w.flush()?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<WaveField> {
    read_field(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let grid = GridSpec::new(vec![-1.0, 0.5], vec![1.0, 2.0], vec![5, 3]).unwrap();
        let f = WaveField::from_fn(grid, |x| Complex64::new(x[0].sin(), x[1] / 3.0));
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        assert_eq!(&buf[..4], b"FGSF");
        assert_eq!(buf.len(), 4 + 8 + 8 + 2 * 8 * 2 + 2 * 8 + 15 * 16);
        let back = read_field(&buf[..]).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let grid = GridSpec::cube(1, 0.0, 1.0, 4).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &WaveField::zeros(grid)).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_field(&bad[..]), Err(FgsError::FieldFormat(_))));
        assert!(read_field(&buf[..buf.len() - 3]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_field(&long[..]), Err(FgsError::FieldFormat(_))));
    }
}
