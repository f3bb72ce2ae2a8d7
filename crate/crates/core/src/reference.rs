//! Reference solutions: Strang split-step Fourier (1D/2D, periodic box)
//! and the closed-form free Gaussian.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{check_dim, FgsError, Result};
use crate::grid::{GridSpec, WaveField};
use crate::initial::GaussianPacket;
use crate::potential::Potential;
use crate::propagator::step_schedule;

/// Fraction of the box, per side, treated as boundary layer.
pub const BOUNDARY_FRACTION: f64 = 0.1;
/// Largest relative mass allowed in the boundary layer.
pub const BOUNDARY_MASS_TOL: f64 = 1e-8;

/// Periodic box `[lower, lower + L)` per axis with `N` points, endpoint excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicGrid {
    lower: Vec<f64>,
    length: Vec<f64>,
    points: Vec<usize>,
}

impl PeriodicGrid {
    pub fn new(lower: Vec<f64>, length: Vec<f64>, points: Vec<usize>) -> Result<Self> {
        check_dim(lower.len(), length.len())?;
        check_dim(lower.len(), points.len())?;
        if lower.is_empty() || lower.len() > 2 {
            return Err(FgsError::SpectralGrid(format!("periodic grids support 1 or 2 axes, got {}", lower.len())));
        }
        for (axis, (&l, &n)) in length.iter().zip(&points).enumerate() {
            if !(l > 0.0 && l.is_finite()) {
                return Err(FgsError::SpectralGrid(format!("axis {axis}: box length must be positive, got {l}")));
            }
            if !n.is_power_of_two() || n < 2 {
                return Err(FgsError::SpectralGrid(format!("axis {axis}: {n} points is not a power of two")));
            }
        }
        Ok(Self { lower, length, points })
    }

    /// `[-pi, pi)^m` with `n` points per axis.
    pub fn centered(dim: usize, n: usize) -> Result<Self> {
        Self::new(vec![-PI; dim], vec![2.0 * PI; dim], vec![n; dim])
    }

    /// `[-pi, pi)^m` with the smallest power of two resolving spacing `pi eps / 4`.
    pub fn resolving(dim: usize, epsilon: f64) -> Result<Self> {
        let needed = (2.0 * PI / (PI * epsilon / 4.0)).ceil() as usize;
        Self::centered(dim, needed.next_power_of_two())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.length[axis] / self.points[axis] as f64
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The same nodes as an inclusive grid: `upper = lower + L - L/N`.
    pub fn grid_spec(&self) -> GridSpec {
        let upper = (0..self.dim()).map(|a| self.lower[a] + self.length[a] - self.spacing(a)).collect();
        GridSpec::new(self.lower.clone(), upper, self.points.clone()).expect("periodic grid is valid")
    }

    /// Angular wavenumber of FFT bin `k` on `axis`.
    pub fn wavenumber(&self, axis: usize, k: usize) -> f64 {
        let n = self.points[axis];
        let signed = if k < n / 2 { k as f64 } else { k as f64 - n as f64 };
        2.0 * PI * signed / self.length[axis]
    }
}

#[derive(Debug, Clone)]
pub struct Sp2Config {
    pub grid: PeriodicGrid,
    pub dt: f64,
    pub epsilon: f64,
    pub potential: Potential,
    /// Fail when the boundary layer carries mass at the end of the run.
    pub check_boundary: bool,
}

impl Sp2Config {
    pub fn new(grid: PeriodicGrid, dt: f64, epsilon: f64, potential: Potential) -> Result<Self> {
        let cfg = Self { grid, dt, epsilon, potential, check_boundary: true };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.grid.dim(), self.potential.dim())?;
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(FgsError::InvalidParameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(FgsError::InvalidParameter(format!("time step must be positive, got {}", self.dt)));
        }
        let required = PI * self.epsilon / 4.0;
        for axis in 0..self.grid.dim() {
            let spacing = self.grid.spacing(axis);
            if spacing > required * (1.0 + 1e-12) {
                return Err(FgsError::UnresolvedGrid { axis, spacing, required });
            }
        }
        Ok(())
    }
}

/// Split-step propagator with cached phases and FFT plans.
pub struct Sp2Stepper {
    grid: PeriodicGrid,
    epsilon: f64,
    energy: Vec<f64>,
    xi_sq: Vec<f64>,
    ffts: Vec<(Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>,
    phases: HashMap<u64, (Vec<Complex64>, Vec<Complex64>)>,
    scratch: Vec<Complex64>,
    column: Vec<Complex64>,
}

impl std::fmt::Debug for Sp2Stepper {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sp2Stepper").field("grid", &self.grid).field("epsilon", &self.epsilon).finish()
    }
}

impl Sp2Stepper {
    pub fn new(grid: &PeriodicGrid, epsilon: f64, potential: &Potential) -> Result<Self> {
        check_dim(grid.dim(), potential.dim())?;
        let spec = grid.grid_spec();
        let energy = (0..spec.len()).map(|k| potential.eval(&spec.point(k))).collect::<Result<Vec<_>>>()?;
        let mut xi_sq = vec![0.0; spec.len()];
        let n = grid.points();
        for (idx, v) in xi_sq.iter_mut().enumerate() {
            *v = if grid.dim() == 1 {
                grid.wavenumber(0, idx).powi(2)
            } else {
                grid.wavenumber(0, idx / n[1]).powi(2) + grid.wavenumber(1, idx % n[1]).powi(2)
            };
        }
        let mut planner = FftPlanner::new();
        let ffts = n.iter().map(|&k| (planner.plan_fft_forward(k), planner.plan_fft_inverse(k))).collect();
        Ok(Self {
            grid: grid.clone(),
            epsilon,
            energy,
            xi_sq,
            ffts,
            phases: HashMap::new(),
            scratch: Vec::new(),
            column: Vec::new(),
        })
    }

    fn phases_for(&mut self, h: f64) -> &(Vec<Complex64>, Vec<Complex64>) {
        let eps = self.epsilon;
        let (energy, xi_sq) = (&self.energy, &self.xi_sq);
        self.phases.entry(h.to_bits()).or_insert_with(|| {
            let half_v = energy.iter().map(|e| Complex64::from_polar(1.0, -e * h / (2.0 * eps))).collect();
            let kin = xi_sq.iter().map(|x| Complex64::from_polar(1.0, -eps * x * h / 2.0)).collect();
            (half_v, kin)
        })
    }

    fn transform(&mut self, data: &mut [Complex64], inverse: bool) {
        let n = self.grid.points().to_vec();
        let pick = |f: &(Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)| if inverse { f.1.clone() } else { f.0.clone() };
        if n.len() == 1 {
            let fft = pick(&self.ffts[0]);
            self.scratch.resize(fft.get_inplace_scratch_len(), Complex64::new(0.0, 0.0));
            fft.process_with_scratch(data, &mut self.scratch);
            return;
        }
        let (rows, cols) = (n[0], n[1]);
        let row_fft = pick(&self.ffts[1]);
        let col_fft = pick(&self.ffts[0]);
        let need = row_fft.get_inplace_scratch_len().max(col_fft.get_inplace_scratch_len());
        self.scratch.resize(need, Complex64::new(0.0, 0.0));
        // rows are contiguous; rustfft handles a batch of equal-length rows at once
        row_fft.process_with_scratch(data, &mut self.scratch);
        self.column.resize(rows, Complex64::new(0.0, 0.0));
        for c in 0..cols {
            for r in 0..rows {
                self.column[r] = data[r * cols + c];
            }
            col_fft.process_with_scratch(&mut self.column, &mut self.scratch);
            for r in 0..rows {
                data[r * cols + c] = self.column[r];
            }
        }
    }

    /// One Strang step of length `h` (negative `h` steps backwards).
    pub fn step(&mut self, data: &mut [Complex64], h: f64) {
        let n_total = data.len() as f64;
        let (half_v, kin) = {
            let (a, b) = self.phases_for(h);
            (a.clone(), b.clone())
        };
        for (u, ph) in data.iter_mut().zip(&half_v) {
            *u *= ph;
        }
        self.transform(data, false);
        for (u, ph) in data.iter_mut().zip(&kin) {
            *u *= ph / n_total;
        }
        self.transform(data, true);
        for (u, ph) in data.iter_mut().zip(&half_v) {
            *u *= ph;
        }
    }

    /// Spectral derivative of `data` along `axis`.
    pub fn gradient(&mut self, data: &[Complex64], axis: usize) -> Vec<Complex64> {
        let mut hat = data.to_vec();
        self.transform(&mut hat, false);
        let n = self.grid.points().to_vec();
        let total = data.len() as f64;
        for (idx, v) in hat.iter_mut().enumerate() {
            let k = if n.len() == 1 {
                idx
            } else if axis == 0 {
                idx / n[1]
            } else {
                idx % n[1]
            };
            // drop the unpaired Nyquist mode so real fields keep real derivatives
            let xi = if k == n[axis] / 2 { 0.0 } else { self.grid.wavenumber(axis, k) };
            *v *= Complex64::new(0.0, xi) / total;
        }
        self.transform(&mut hat, true);
        hat
    }
}

/// Integrate from 0 to `t_final` with Strang steps of `cfg.dt`, the last
/// one shortened to land on `t_final`.
pub fn sp2_solve(u0: &WaveField, cfg: &Sp2Config, t_final: f64) -> Result<WaveField> {
    cfg.validate()?;
    let spec = cfg.grid.grid_spec();
    if u0.grid() != &spec {
        return Err(FgsError::SpectralGrid("initial field is not on the periodic grid".into()));
    }
    let mut stepper = Sp2Stepper::new(&cfg.grid, cfg.epsilon, &cfg.potential)?;
    let mut data = u0.values().to_vec();
    for (_, h) in step_schedule(0.0, t_final, cfg.dt)? {
        stepper.step(&mut data, h);
    }
    if data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(FgsError::NonFinite("split-step solution".into()));
    }
    let out = WaveField::new(spec, data)?;
    if cfg.check_boundary {
        let frac = boundary_mass_fraction(&cfg.grid, &out);
        if frac >= BOUNDARY_MASS_TOL {
            return Err(FgsError::SpectralGrid(format!(
                "mass fraction {frac:e} in the boundary layer exceeds {BOUNDARY_MASS_TOL:e}; enlarge the box"
            )));
        }
    }
    Ok(out)
}

/// Share of the discrete mass within `BOUNDARY_FRACTION * L` of any box face.
pub fn boundary_mass_fraction(grid: &PeriodicGrid, field: &WaveField) -> f64 {
    let spec = field.grid();
    let mut x = vec![0.0; spec.dim()];
    let (mut edge, mut total) = (0.0, 0.0);
    for (k, v) in field.values().iter().enumerate() {
        spec.point_into(k, &mut x);
        let w = v.norm_sqr();
        total += w;
        let near = (0..grid.dim()).any(|a| {
            let rel = (x[a] - grid.lower[a]) / grid.length[a];
            !(BOUNDARY_FRACTION..=1.0 - BOUNDARY_FRACTION).contains(&rel)
        });
        if near {
            edge += w;
        }
    }
    if total > 0.0 {
        edge / total
    } else {
        0.0
    }
}

/// Spectral gradient of a field on a periodic grid, one vector per axis.
pub fn spectral_gradient(grid: &PeriodicGrid, field: &WaveField, epsilon: f64) -> Result<Vec<Vec<Complex64>>> {
    if field.grid() != &grid.grid_spec() {
        return Err(FgsError::SpectralGrid("field is not on the periodic grid".into()));
    }
    let mut stepper = Sp2Stepper::new(grid, epsilon, &Potential::null(grid.dim()))?;
    Ok((0..grid.dim()).map(|a| stepper.gradient(field.values(), a)).collect())
}

/// Free evolution of the Gaussian packet, a product over axes of
/// `(pi eps)^{-1/4} Q^{-1/2} exp((i/2eps) PQ^{-1} d^2 + (i/eps) p d + (i/eps) S)`
/// with `Q = a^{-1/2}(1 + i a t)`, `PQ^{-1} = i a / (1 + i a t)`, `d = x - q~ - p~ t`.
pub fn exact_free_gaussian(packet: &GaussianPacket, t: f64, x: &[f64]) -> Result<Complex64> {
    check_dim(packet.dim(), x.len())?;
    let eps = packet.epsilon;
    let i = Complex64::new(0.0, 1.0);
    let mut out = Complex64::new((PI * eps).powf(-0.25 * packet.dim() as f64), 0.0);
    for j in 0..packet.dim() {
        let a = packet.a[j];
        let p = packet.p_tilde[j];
        let d = x[j] - packet.q_tilde[j] - p * t;
        let q_mat = Complex64::new(1.0, a * t) / a.sqrt();
        let b = i * a / Complex64::new(1.0, a * t);
        let expo = i / (2.0 * eps) * b * d * d + i * (p * d + 0.5 * p * p * t) / eps;
        out *= q_mat.sqrt().inv() * expo.exp();
    }
    Ok(out)
}
