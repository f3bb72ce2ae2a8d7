//! Frozen-Gaussian contributions `Lambda_j` and their assembly into wave
//! fields, densities and current densities on a grid (`m <= 2`).

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{check_dim, FgsError, Result};
use crate::grid::{real_l2_norm, GridSpec, WaveField};
use crate::propagator::TrajectoryState;

/// Contributions below `TRUNCATION_TAU` times their peak are skipped.
pub const TRUNCATION_TAU: f64 = 1e-16;
/// Largest dimension for grid assembly.
pub const MAX_GRID_DIM: usize = 2;

/// Squared truncation radius `2 eps ln(1/tau)`.
pub fn truncation_radius_sq(epsilon: f64) -> f64 {
    2.0 * epsilon * (1.0 / TRUNCATION_TAU).ln()
}

/// Default reconstruction grid: spacing at most `2 pi eps / 16` on `[lower, upper]^m`.
pub fn default_grid(dim: usize, lower: f64, upper: f64, epsilon: f64) -> Result<GridSpec> {
    GridSpec::with_max_spacing(dim, lower, upper, 2.0 * PI * epsilon / 16.0)
}

fn prefactor(m: usize, epsilon: f64) -> f64 {
    (2.0 * PI * epsilon).powf(-1.5 * m as f64)
}

fn check_pi(pi_value: f64) -> Result<()> {
    if !(pi_value > 0.0 && pi_value.is_finite()) {
        return Err(FgsError::InvalidParameter(format!("sampling density must be positive, got {pi_value}")));
    }
    Ok(())
}

/// `Lambda(x) = (2 pi eps)^{-3m/2} (A / pi) exp(i Theta / eps)` with
/// `Theta = S + P.(x - Q) + (i/2)|x - Q|^2`.
pub fn lambda_eval(traj: &TrajectoryState, pi_value: f64, x: &[f64], epsilon: f64) -> Result<Complex64> {
    check_dim(traj.dim(), x.len())?;
    check_pi(pi_value)?;
    let mut phase = traj.s;
    let mut d2 = 0.0;
    for j in 0..x.len() {
        let d = x[j] - traj.q[j];
        phase += traj.p[j] * d;
        d2 += d * d;
    }
    let env = Complex64::from_polar((-d2 / (2.0 * epsilon)).exp(), phase / epsilon);
    Ok(prefactor(x.len(), epsilon) * traj.a / pi_value * env)
}

/// `grad Lambda = Lambda (i/eps)(P + i(x - Q))`.
pub fn lambda_grad(traj: &TrajectoryState, pi_value: f64, x: &[f64], epsilon: f64) -> Result<Vec<Complex64>> {
    let lam = lambda_eval(traj, pi_value, x, epsilon)?;
    Ok((0..x.len())
        .map(|j| lam * Complex64::new(-(x[j] - traj.q[j]), traj.p[j]) / epsilon)
        .collect())
}

#[derive(Debug, Clone)]
pub struct FgsField {
    pub field: WaveField,
    pub samples: usize,
    pub seed: Option<u64>,
    pub t: f64,
}

/// Real scalar field on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl RealField {
    pub fn l2_norm(&self) -> f64 {
        real_l2_norm(&self.grid, &self.values)
    }

    /// `||self - other|| / ||other||`.
    pub fn relative_l2(&self, other: &RealField) -> Result<f64> {
        if self.grid != other.grid {
            return Err(FgsError::InvalidParameter("fields live on different grids".into()));
        }
        let diff: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(real_l2_norm(&self.grid, &diff) / other.l2_norm())
    }
}

/// Real vector field, one component per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: GridSpec,
    pub components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn l2_norm(&self) -> f64 {
        self.components
            .iter()
            .map(|c| real_l2_norm(&self.grid, c).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn relative_l2(&self, other: &VectorField) -> Result<f64> {
        if self.grid != other.grid || self.components.len() != other.components.len() {
            return Err(FgsError::InvalidParameter("vector fields are not comparable".into()));
        }
        let mut num = 0.0;
        for (a, b) in self.components.iter().zip(&other.components) {
            let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            num += real_l2_norm(&self.grid, &diff).powi(2);
        }
        Ok(num.sqrt() / other.l2_norm())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructOptions {
    /// Skip contributions beyond the truncation radius.
    pub truncate: bool,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self { truncate: true }
    }
}

/// `u_FGS(x) = (1/M) sum_j Lambda_j(x)` on `grid`.
pub fn reconstruct(
    trajs: &[TrajectoryState],
    pi_values: &[f64],
    grid: &GridSpec,
    epsilon: f64,
) -> Result<FgsField> {
    reconstruct_with(trajs, pi_values, grid, epsilon, ReconstructOptions::default())
}

pub fn reconstruct_with(
    trajs: &[TrajectoryState],
    pi_values: &[f64],
    grid: &GridSpec,
    epsilon: f64,
    opts: ReconstructOptions,
) -> Result<FgsField> {
    let (values, _) = assemble(trajs, pi_values, grid, epsilon, opts, false)?;
    Ok(FgsField {
        field: WaveField::new(grid.clone(), values)?,
        samples: trajs.len(),
        seed: None,
        t: trajs[0].t,
    })
}

/// `rho = |u|^2`.
pub fn density_field(field: &WaveField) -> RealField {
    RealField { grid: field.grid().clone(), values: field.values().iter().map(|v| v.norm_sqr()).collect() }
}

/// Probability current `J = eps Im(conj(u) grad u)` assembled from analytic
/// gradients of the frozen Gaussians. Also returns the wave field.
pub fn current_density_field(
    trajs: &[TrajectoryState],
    pi_values: &[f64],
    grid: &GridSpec,
    epsilon: f64,
) -> Result<(VectorField, FgsField)> {
    let opts = ReconstructOptions::default();
    let (values, grads) = assemble(trajs, pi_values, grid, epsilon, opts, true)?;
    let m = grid.dim();
    let mut components = vec![vec![0.0; values.len()]; m];
    for (k, u) in values.iter().enumerate() {
        for a in 0..m {
            let du = grads[k * m + a];
            // (eps / 2i)(conj(u) du - u conj(du)) is real; check the residue
            let z = epsilon / Complex64::new(0.0, 2.0) * (u.conj() * du - u * du.conj());
            debug_assert!(z.im.abs() <= 1e-12 * z.norm().max(f64::MIN_POSITIVE));
            components[a][k] = z.re;
        }
    }
    let field = FgsField {
        field: WaveField::new(grid.clone(), values)?,
        samples: trajs.len(),
        seed: None,
        t: trajs[0].t,
    };
    Ok((VectorField { grid: grid.clone(), components }, field))
}

/// Current density of an arbitrary field given its gradient per axis.
pub fn current_from_gradient(field: &WaveField, grads: &[Vec<Complex64>], epsilon: f64) -> VectorField {
    let components = grads
        .iter()
        .map(|g| {
            field
                .values()
                .iter()
                .zip(g)
                .map(|(u, du)| epsilon * (u.conj() * du).im)
                .collect()
        })
        .collect();
    VectorField { grid: field.grid().clone(), components }
}

/// Rows of axis 0 handled by one parallel task.
const SLAB_ROWS: usize = 16;

#[allow(clippy::type_complexity)]
fn assemble(
    trajs: &[TrajectoryState],
    pi_values: &[f64],
    grid: &GridSpec,
    epsilon: f64,
    opts: ReconstructOptions,
    with_grad: bool,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let m = grid.dim();
    if m > MAX_GRID_DIM {
        return Err(FgsError::CostGuard { max: MAX_GRID_DIM, got: m });
    }
    if trajs.is_empty() {
        return Err(FgsError::InvalidParameter("reconstruction needs at least one trajectory".into()));
    }
    check_dim(trajs.len(), pi_values.len())?;
    for (j, t) in trajs.iter().enumerate() {
        check_dim(m, t.dim())?;
        check_pi(pi_values[j])?;
    }
    let n = grid.points_per_axis();
    let rows = n[0];
    let cols = if m == 2 { n[1] } else { 1 };
    let h: Vec<f64> = grid.spacing();
    let lower = grid.lower();
    let radius = truncation_radius_sq(epsilon).sqrt();
    let scale = prefactor(m, epsilon) / trajs.len() as f64;
    let weights: Vec<Complex64> = trajs
        .iter()
        .zip(pi_values)
        .map(|(t, &pi)| scale * t.a / pi * Complex64::from_polar(1.0, t.s / epsilon))
        .collect();

    // index window [lo, hi) of axis `a` within the truncation radius of `c`
    let window = |a: usize, c: f64, len: usize| -> (usize, usize) {
        if !opts.truncate {
            return (0, len);
        }
        let lo = ((c - radius - lower[a]) / h[a]).ceil().max(0.0);
        let hi = ((c + radius - lower[a]) / h[a]).floor() + 1.0;
        let lo = lo.min(len as f64) as usize;
        let hi = hi.clamp(0.0, len as f64) as usize;
        (lo, hi.max(lo))
    };
    // per-axis factor exp(i P d / eps - d^2 / (2 eps)) and its d
    let axis_factors = |a: usize, t: &TrajectoryState, lo: usize, hi: usize, f: &mut Vec<Complex64>, d: &mut Vec<f64>| {
        f.clear();
        d.clear();
        for k in lo..hi {
            let x = grid.axis_coordinate(a, k);
            let dx = x - t.q[a];
            f.push(Complex64::from_polar((-dx * dx / (2.0 * epsilon)).exp(), t.p[a] * dx / epsilon));
            d.push(dx);
        }
    };

    let slabs: Vec<(usize, usize)> = (0..rows)
        .step_by(SLAB_ROWS)
        .map(|r0| (r0, (r0 + SLAB_ROWS).min(rows)))
        .collect();
    let parts: Vec<(Vec<Complex64>, Vec<Complex64>)> = slabs
        .par_iter()
        .map(|&(r0, r1)| {
            let len = (r1 - r0) * cols;
            let mut vals = vec![Complex64::new(0.0, 0.0); len];
            let mut grads = if with_grad { vec![Complex64::new(0.0, 0.0); len * m] } else { Vec::new() };
            let (mut f0, mut d0, mut f1, mut d1) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for (t, &w) in trajs.iter().zip(&weights) {
                let (lo0, hi0) = window(0, t.q[0], rows);
                let (lo0, hi0) = (lo0.max(r0), hi0.min(r1));
                if lo0 >= hi0 {
                    continue;
                }
                let (lo1, hi1) = if m == 2 { window(1, t.q[1], cols) } else { (0, 1) };
                if lo1 >= hi1 {
                    continue;
                }
                axis_factors(0, t, lo0, hi0, &mut f0, &mut d0);
                if m == 2 {
                    axis_factors(1, t, lo1, hi1, &mut f1, &mut d1);
                } else {
                    f1.clear();
                    f1.push(Complex64::new(1.0, 0.0));
                    d1.clear();
                    d1.push(0.0);
                }
                for (i, (&a0, &dx0)) in f0.iter().zip(&d0).enumerate() {
                    let row = (lo0 + i - r0) * cols;
                    let wa = w * a0;
                    for (k, (&a1, &dx1)) in f1.iter().zip(&d1).enumerate() {
                        let idx = row + lo1 + k;
                        let lam = wa * a1;
                        vals[idx] += lam;
                        if with_grad {
                            grads[idx * m] += lam * Complex64::new(-dx0, t.p[0]);
                            if m == 2 {
                                grads[idx * m + 1] += lam * Complex64::new(-dx1, t.p[1]);
                            }
                        }
                    }
                }
            }
            if with_grad {
                for g in grads.iter_mut() {
                    *g /= epsilon;
                }
            }
            (vals, grads)
        })
        .collect();
    let mut values = Vec::with_capacity(grid.len());
    let mut grads = Vec::with_capacity(if with_grad { grid.len() * m } else { 0 });
    for (v, g) in parts {
        values.extend(v);
        grads.extend(g);
    }
    Ok((values, grads))
}
