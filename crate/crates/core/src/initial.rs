//! Initial wave functions and the initial frozen-Gaussian amplitude `A(0, q, p)`.
//!
//! Two families are supported: semiclassical Gaussian packets, for which
//! the amplitude has a closed form, and WKB data `a_in(x) exp(i S_in(x)/eps)`
//! with a Gaussian `a_in`, for which a stationary-phase approximation is
//! used. A brute-force quadrature of the defining integral is available for
//! `m <= 2` as a cross-check.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, FgsError, Result};
use crate::grid::{GridSpec, PhasePoint};

/// Eigenvalues of the phase Hessian below this magnitude are treated as zero.
pub const HESSIAN_ZERO: f64 = 1e-12;

/// Normalized semiclassical Gaussian wave packet
/// `(prod a)^{1/4} (pi eps)^{-m/4} exp(i p~.(x-q~)/eps - sum a_j (x_j-q~_j)^2 / (2 eps))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPacket {
    pub a: Vec<f64>,
    pub q_tilde: Vec<f64>,
    pub p_tilde: Vec<f64>,
    pub epsilon: f64,
}

impl GaussianPacket {
    pub fn new(a: Vec<f64>, q_tilde: Vec<f64>, p_tilde: Vec<f64>, epsilon: f64) -> Result<Self> {
        if a.is_empty() {
            return Err(FgsError::InvalidParameter("packet needs dimension >= 1".into()));
        }
        check_dim(a.len(), q_tilde.len())?;
        check_dim(a.len(), p_tilde.len())?;
        if a.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(FgsError::InvalidParameter("packet widths a_j must be positive".into()));
        }
        validate_epsilon(epsilon)?;
        Ok(Self { a, q_tilde, p_tilde, epsilon })
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn eval(&self, x: &[f64]) -> Result<Complex64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> Complex64 {
        let eps = self.epsilon;
        let m = self.dim() as f64;
        let norm = self.a.iter().product::<f64>().powf(0.25) * (PI * eps).powf(-m / 4.0);
        let mut phase = 0.0;
        let mut decay = 0.0;
        for j in 0..self.dim() {
            let d = x[j] - self.q_tilde[j];
            phase += self.p_tilde[j] * d;
            decay += self.a[j] * d * d;
        }
        Complex64::from_polar(norm * (-decay / (2.0 * eps)).exp(), phase / eps)
    }

    /// Closed-form `A(0, q, p)` from Gaussian integration.
    pub fn amplitude(&self, z: &PhasePoint) -> Result<InitialAmplitude> {
        check_dim(self.dim(), z.dim())?;
        Ok(InitialAmplitude {
            value: self.amplitude_unchecked(&z.q, &z.p),
            method: AmplitudeMethod::AnalyticGaussian,
        })
    }

    pub(crate) fn amplitude_unchecked(&self, q: &[f64], p: &[f64]) -> Complex64 {
        let eps = self.epsilon;
        let m = self.dim();
        let mut log_mod = m as f64 * 2f64.ln() + 0.25 * m as f64 * (PI * eps).ln();
        let mut phase = 0.0;
        for j in 0..m {
            let a = self.a[j];
            let dp = self.p_tilde[j] - p[j];
            let dq = self.q_tilde[j] - q[j];
            log_mod += 0.5 * (a.sqrt() / (1.0 + a)).ln();
            log_mod -= (dp * dp + a * dq * dq) / (2.0 * (1.0 + a) * eps);
            phase += (a * self.q_tilde[j] + q[j]) * dp / ((1.0 + a) * eps);
            phase += (p[j] * q[j] - self.p_tilde[j] * self.q_tilde[j]) / eps;
        }
        Complex64::from_polar(log_mod.exp(), phase)
    }

    /// `int |A(0, z)| dz = 2^{2m} (pi eps)^{5m/4} prod ((1 + a_j)/sqrt(a_j))^{1/2}`.
    pub fn amplitude_l1_norm(&self) -> f64 {
        let m = self.dim() as f64;
        let prod: f64 = self.a.iter().map(|a| ((1.0 + a) / a.sqrt()).sqrt()).product();
        2f64.powf(2.0 * m) * (PI * self.epsilon).powf(1.25 * m) * prod
    }
}

/// Gaussian WKB amplitude `(prod a)^{1/4} pi^{-m/4} exp(-sum a_j (x_j - x~_j)^2 / 2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianAmplitude {
    pub a: Vec<f64>,
    pub center: Vec<f64>,
}

impl GaussianAmplitude {
    pub fn new(a: Vec<f64>, center: Vec<f64>) -> Result<Self> {
        check_dim(a.len(), center.len())?;
        if a.is_empty() || a.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(FgsError::InvalidParameter("amplitude widths a_j must be positive".into()));
        }
        Ok(Self { a, center })
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let m = self.dim() as f64;
        let norm = self.a.iter().product::<f64>().powf(0.25) * PI.powf(-m / 4.0);
        let decay: f64 = (0..self.dim())
            .map(|j| self.a[j] * (x[j] - self.center[j]).powi(2))
            .sum();
        norm * (-0.5 * decay).exp()
    }
}

/// Phase `S_in` of WKB data together with the inverse `T` of its gradient.
///
/// Implementations must be safe to call concurrently.
pub trait WkbPhase: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, y: &[f64]) -> f64;
    fn gradient(&self, y: &[f64]) -> Vec<f64>;
    /// Row-major m×m Hessian.
    fn hessian(&self, y: &[f64]) -> Vec<f64>;
    /// `T(p)`, the unique `y` with `grad S_in(y) = p`, or `None` outside `D(T)`.
    fn inverse_gradient(&self, p: &[f64]) -> Option<Vec<f64>>;
    /// `|det grad^2 S_in(y)|`.
    fn hessian_det_abs(&self, y: &[f64]) -> f64 {
        let m = self.dim();
        DMatrix::from_row_slice(m, m, &self.hessian(y)).determinant().abs()
    }
}

/// Separable phase `S(x) = -(1/k) sum_j ln(e^{k(x_j-c_j)} + e^{-k(x_j-c_j)})`.
///
/// Its gradient `-tanh(k(x - c))` compresses the flow toward `c`, which
/// focuses into a caustic at `t = 1/k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogCoshPhase {
    pub rate: f64,
    pub center: Vec<f64>,
}

impl WkbPhase for LogCoshPhase {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, y: &[f64]) -> f64 {
        let k = self.rate;
        y.iter()
            .zip(&self.center)
            .map(|(yj, cj)| {
                let u = (k * (yj - cj)).abs();
                // ln(e^u + e^-u) without overflow
                -(u + (-2.0 * u).exp().ln_1p()) / k
            })
            .sum()
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.center)
            .map(|(yj, cj)| -(self.rate * (yj - cj)).tanh())
            .collect()
    }

    fn hessian(&self, y: &[f64]) -> Vec<f64> {
        let m = self.dim();
        let mut h = vec![0.0; m * m];
        for j in 0..m {
            let c = (self.rate * (y[j] - self.center[j])).cosh();
            h[j * m + j] = -self.rate / (c * c);
        }
        h
    }

    fn inverse_gradient(&self, p: &[f64]) -> Option<Vec<f64>> {
        if p.iter().any(|v| !(v.abs() < 1.0)) {
            return None;
        }
        Some(
            p.iter()
                .zip(&self.center)
                .map(|(pj, cj)| cj + (-pj).atanh() / self.rate)
                .collect(),
        )
    }

    fn hessian_det_abs(&self, y: &[f64]) -> f64 {
        y.iter()
            .zip(&self.center)
            .map(|(yj, cj)| {
                let c = (self.rate * (yj - cj)).cosh();
                self.rate / (c * c)
            })
            .product()
    }
}

/// Isotropic quadratic phase `S(x) = (curvature/2) |x - center|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticPhase {
    pub curvature: f64,
    pub center: Vec<f64>,
}

impl WkbPhase for QuadraticPhase {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, y: &[f64]) -> f64 {
        let r2: f64 = y.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum();
        0.5 * self.curvature * r2
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.center)
            .map(|(a, b)| self.curvature * (a - b))
            .collect()
    }

    fn hessian(&self, _y: &[f64]) -> Vec<f64> {
        let m = self.dim();
        let mut h = vec![0.0; m * m];
        for j in 0..m {
            h[j * m + j] = self.curvature;
        }
        h
    }

    fn inverse_gradient(&self, p: &[f64]) -> Option<Vec<f64>> {
        if self.curvature == 0.0 {
            return None;
        }
        Some(
            p.iter()
                .zip(&self.center)
                .map(|(pj, cj)| cj + pj / self.curvature)
                .collect(),
        )
    }

    fn hessian_det_abs(&self, _y: &[f64]) -> f64 {
        self.curvature.abs().powi(self.dim() as i32)
    }
}

/// WKB initial data `a_in(x) exp(i S_in(x) / eps)`.
#[derive(Debug, Clone)]
pub struct WkbData {
    pub amplitude: GaussianAmplitude,
    pub phase: Arc<dyn WkbPhase>,
    pub epsilon: f64,
}

impl WkbData {
    pub fn new(amplitude: GaussianAmplitude, phase: Arc<dyn WkbPhase>, epsilon: f64) -> Result<Self> {
        check_dim(amplitude.dim(), phase.dim())?;
        validate_epsilon(epsilon)?;
        Ok(Self { amplitude, phase, epsilon })
    }

    pub fn dim(&self) -> usize {
        self.amplitude.dim()
    }

    pub fn eval(&self, x: &[f64]) -> Result<Complex64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> Complex64 {
        Complex64::from_polar(self.amplitude.eval(x), self.phase.value(x) / self.epsilon)
    }

    /// Signature of `grad^2 S_in(y)`: #positive minus #negative eigenvalues.
    pub fn hessian_signature(&self, y: &[f64]) -> Result<i32> {
        let m = self.dim();
        let h = DMatrix::from_row_slice(m, m, &self.phase.hessian(y));
        let eig = SymmetricEigen::new(h);
        let mut sig = 0;
        for &lambda in eig.eigenvalues.iter() {
            if lambda.abs() < HESSIAN_ZERO {
                return Err(FgsError::SingularHessian { det: lambda.abs() });
            }
            sig += if lambda > 0.0 { 1 } else { -1 };
        }
        Ok(sig)
    }

    /// Stationary-phase amplitude `A_sp(q, p)`; exactly zero outside `D(T)`.
    pub fn amplitude_stationary_phase(&self, z: &PhasePoint) -> Result<InitialAmplitude> {
        check_dim(self.dim(), z.dim())?;
        let value = self.stationary_phase_unchecked(&z.q, &z.p)?;
        Ok(InitialAmplitude { value, method: AmplitudeMethod::StationaryPhase })
    }

    pub(crate) fn stationary_phase_unchecked(&self, q: &[f64], p: &[f64]) -> Result<Complex64> {
        let Some(y) = self.phase.inverse_gradient(p) else {
            return Ok(Complex64::new(0.0, 0.0));
        };
        let eps = self.epsilon;
        let m = self.dim() as f64;
        let det = self.phase.hessian_det_abs(&y);
        if det < HESSIAN_ZERO {
            return Err(FgsError::SingularHessian { det });
        }
        let sig = self.hessian_signature(&y)?;
        let mut dist2 = 0.0;
        let mut p_dot = 0.0;
        for j in 0..y.len() {
            let d = y[j] - q[j];
            dist2 += d * d;
            p_dot += p[j] * d;
        }
        let modulus = 2f64.powf(m)
            * (PI * eps).powf(m / 2.0)
            * self.amplitude.eval(&y)
            * (-dist2 / (2.0 * eps)).exp()
            / det.sqrt();
        let phase = (self.phase.value(&y) - p_dot) / eps + PI * sig as f64 / 4.0;
        Ok(Complex64::from_polar(modulus, phase))
    }
}

/// Either family of initial data.
#[derive(Debug, Clone)]
pub enum InitialData {
    Gaussian(GaussianPacket),
    Wkb(WkbData),
}

impl InitialData {
    pub fn dim(&self) -> usize {
        match self {
            InitialData::Gaussian(g) => g.dim(),
            InitialData::Wkb(w) => w.dim(),
        }
    }

    pub fn epsilon(&self) -> f64 {
        match self {
            InitialData::Gaussian(g) => g.epsilon,
            InitialData::Wkb(w) => w.epsilon,
        }
    }

    /// Pointwise `u_in(x)`.
    pub fn eval_initial(&self, x: &[f64]) -> Result<Complex64> {
        match self {
            InitialData::Gaussian(g) => g.eval(x),
            InitialData::Wkb(w) => w.eval(x),
        }
    }

    /// Preferred `A(0, q, p)`: closed form for Gaussian packets,
    /// stationary phase for WKB data.
    pub fn amplitude(&self, z: &PhasePoint) -> Result<InitialAmplitude> {
        match self {
            InitialData::Gaussian(g) => g.amplitude(z),
            InitialData::Wkb(w) => w.amplitude_stationary_phase(z),
        }
    }

    /// Rectangle-rule evaluation of
    /// `2^{m/2} int u_in(y) exp((i/eps)(-p.(y-q) + (i/2)|y-q|^2)) dy`.
    ///
    /// Restricted to `m <= 2`; the grid spacing must not exceed `pi eps / 4`.
    pub fn amplitude_quadrature(&self, z: &PhasePoint, grid: &GridSpec) -> Result<InitialAmplitude> {
        let m = self.dim();
        check_dim(m, z.dim())?;
        check_dim(m, grid.dim())?;
        if m > 2 {
            return Err(FgsError::CostGuard { max: 2, got: m });
        }
        let eps = self.epsilon();
        let required = PI * eps / 4.0;
        for axis in 0..m {
            let h = grid.axis_spacing(axis);
            if h > required {
                return Err(FgsError::UnresolvedGrid { axis, spacing: h, required });
            }
        }
        let mut y = vec![0.0; m];
        let mut sum = Complex64::new(0.0, 0.0);
        for idx in 0..grid.len() {
            grid.point_into(idx, &mut y);
            let u = match self {
                InitialData::Gaussian(g) => g.eval_unchecked(&y),
                InitialData::Wkb(w) => w.eval_unchecked(&y),
            };
            let mut dist2 = 0.0;
            let mut p_dot = 0.0;
            for j in 0..m {
                let d = y[j] - z.q[j];
                dist2 += d * d;
                p_dot += z.p[j] * d;
            }
            sum += u * Complex64::from_polar((-dist2 / (2.0 * eps)).exp(), -p_dot / eps);
        }
        let value = sum * grid.cell_volume() * 2f64.powf(m as f64 / 2.0);
        Ok(InitialAmplitude { value, method: AmplitudeMethod::Quadrature })
    }

    /// A quadrature grid centred on `q` that resolves the integrand of
    /// [`Self::amplitude_quadrature`] (half-width `12 sqrt(eps)`, spacing `pi eps / 8`).
    pub fn quadrature_grid_around(&self, z: &PhasePoint) -> Result<GridSpec> {
        let eps = self.epsilon();
        let half = 12.0 * eps.sqrt();
        let n = ((2.0 * half) / (PI * eps / 8.0)).ceil() as usize + 1;
        GridSpec::new(
            z.q.iter().map(|q| q - half).collect(),
            z.q.iter().map(|q| q + half).collect(),
            vec![n; self.dim()],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AmplitudeMethod {
    AnalyticGaussian,
    StationaryPhase,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialAmplitude {
    pub value: Complex64,
    pub method: AmplitudeMethod,
}

fn validate_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(FgsError::InvalidParameter(format!(
            "semiclassical parameter must lie in (0, 1], got {epsilon}"
        )));
    }
    Ok(())
}

/// Benchmark WKB data with a focusing log-cosh phase (caustic at `t = 0.2`):
/// `a_in = (50/pi)^{1/4} e^{-25 (x - 1/2)^2}`, `S_in = -ln(e^{5(x-1/2)} + e^{-5(x-1/2)}) / 5`.
pub fn caustic_wkb_1d(epsilon: f64) -> Result<WkbData> {
    WkbData::new(
        GaussianAmplitude::new(vec![50.0], vec![0.5])?,
        Arc::new(LogCoshPhase { rate: 5.0, center: vec![0.5] }),
        epsilon,
    )
}

/// Benchmark WKB data without caustics:
/// `a_in = (50/pi)^{1/4} e^{-25 (x - 1/2)^2}`, `S_in = -x^2`.
pub fn quadratic_wkb_1d(epsilon: f64) -> Result<WkbData> {
    WkbData::new(
        GaussianAmplitude::new(vec![50.0], vec![0.5])?,
        Arc::new(QuadraticPhase { curvature: -2.0, center: vec![0.0] }),
        epsilon,
    )
}

pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}
