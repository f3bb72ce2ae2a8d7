//! Potential energy surfaces with closed-form gradient and Hessian.

use std::fmt;
use std::sync::Arc;

use crate::error::{check_dim, FgsError, Result};

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type VectorFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// User-supplied potential. All three callables are required; there is no
/// automatic differentiation. The Hessian callable writes a row-major m×m
/// matrix; the result is symmetrized before use.
#[derive(Clone)]
pub struct CustomPotential {
    pub value: Arc<ValueFn>,
    pub gradient: Arc<VectorFn>,
    pub hessian: Arc<VectorFn>,
}

impl fmt::Debug for CustomPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomPotential")
    }
}

#[derive(Debug, Clone)]
pub enum PotentialKind {
    /// `|x|^2 / 2`
    Harmonic,
    /// `sum_j (1 - cos x_j)`
    Torsion,
    Constant(f64),
    Null,
    /// `|x|^2 / 2 + height * exp(-5 |x|^2)`
    GaussianBump { height: f64 },
    Custom(CustomPotential),
}

#[derive(Debug, Clone)]
pub struct Potential {
    kind: PotentialKind,
    dim: usize,
}

impl Potential {
    pub fn new(kind: PotentialKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(FgsError::InvalidParameter("potential dimension must be >= 1".into()));
        }
        Ok(Self { kind, dim })
    }

    pub fn harmonic(dim: usize) -> Self {
        Self { kind: PotentialKind::Harmonic, dim }
    }

    pub fn torsion(dim: usize) -> Self {
        Self { kind: PotentialKind::Torsion, dim }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self { kind: PotentialKind::Constant(c), dim }
    }

    pub fn null(dim: usize) -> Self {
        Self { kind: PotentialKind::Null, dim }
    }

    pub fn gaussian_bump(dim: usize, height: f64) -> Self {
        Self { kind: PotentialKind::GaussianBump { height }, dim }
    }

    pub fn custom(dim: usize, custom: CustomPotential) -> Self {
        Self { kind: PotentialKind::Custom(custom), dim }
    }

    /// Look up a catalog potential by config key.
    ///
    /// Keys: `harmonic`, `torsion`, `constant` (needs `value`), `null`,
    /// `gaussian_bump` (needs `height`), and the aliases `E1`..`E7` for the
    /// benchmark set.
    pub fn from_key(key: &str, dim: usize, param: Option<f64>) -> Result<Self> {
        let need = |name: &str| {
            param.ok_or_else(|| FgsError::Config(format!("potential `{key}` needs parameter `{name}`")))
        };
        let pot = match key {
            "harmonic" | "E1" | "E7" => Self::harmonic(dim),
            "torsion" | "E2" => Self::torsion(dim),
            "E3" => Self::gaussian_bump(dim, 1.0),
            "E4" => Self::gaussian_bump(dim, 10.0),
            "E5" => Self::constant(dim, 10.0),
            "null" | "E6" => Self::null(dim),
            "constant" => Self::constant(dim, need("value")?),
            "gaussian_bump" => Self::gaussian_bump(dim, need("height")?),
            other => return Err(FgsError::Config(format!("unknown potential `{other}`"))),
        };
        Self::new(pot.kind, dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    /// True when the Hessian does not depend on position.
    pub fn has_constant_hessian(&self) -> bool {
        matches!(
            self.kind,
            PotentialKind::Harmonic | PotentialKind::Constant(_) | PotentialKind::Null
        )
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.value_unchecked(x))
    }

    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut g = vec![0.0; self.dim];
        self.gradient_into(x, &mut g);
        Ok(g)
    }

    /// Row-major m×m Hessian, exactly symmetric.
    pub fn hess(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut h = vec![0.0; self.dim * self.dim];
        self.hessian_into(x, &mut h);
        Ok(h)
    }

    pub(crate) fn value_unchecked(&self, x: &[f64]) -> f64 {
        match &self.kind {
            PotentialKind::Harmonic => 0.5 * norm_sq(x),
            PotentialKind::Torsion => x.iter().map(|v| 1.0 - v.cos()).sum(),
            PotentialKind::Constant(c) => *c,
            PotentialKind::Null => 0.0,
            PotentialKind::GaussianBump { height } => {
                let r2 = norm_sq(x);
                0.5 * r2 + height * (-5.0 * r2).exp()
            }
            PotentialKind::Custom(c) => (c.value)(x),
        }
    }

    pub(crate) fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            PotentialKind::Harmonic => out.copy_from_slice(x),
            PotentialKind::Torsion => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = v.sin();
                }
            }
            PotentialKind::Constant(_) | PotentialKind::Null => out.fill(0.0),
            PotentialKind::GaussianBump { height } => {
                let bump = height * (-5.0 * norm_sq(x)).exp();
                for (o, v) in out.iter_mut().zip(x) {
                    *o = v - 10.0 * v * bump;
                }
            }
            PotentialKind::Custom(c) => (c.gradient)(x, out),
        }
    }

    pub(crate) fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        let m = self.dim;
        match &self.kind {
            PotentialKind::Harmonic => {
                out.fill(0.0);
                for j in 0..m {
                    out[j * m + j] = 1.0;
                }
            }
            PotentialKind::Torsion => {
                out.fill(0.0);
                for j in 0..m {
                    out[j * m + j] = x[j].cos();
                }
            }
            PotentialKind::Constant(_) | PotentialKind::Null => out.fill(0.0),
            PotentialKind::GaussianBump { height } => {
                // d^2/dx_i dx_j of c e^{-5r^2} = c e^{-5r^2} (100 x_i x_j - 10 delta_ij)
                let bump = height * (-5.0 * norm_sq(x)).exp();
                for i in 0..m {
                    for j in 0..m {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        out[i * m + j] = delta + bump * (100.0 * (x[i] * x[j]) - 10.0 * delta);
                    }
                }
            }
            PotentialKind::Custom(c) => {
                (c.hessian)(x, out);
                for i in 0..m {
                    for j in (i + 1)..m {
                        let avg = 0.5 * (out[i * m + j] + out[j * m + i]);
                        out[i * m + j] = avg;
                        out[j * m + i] = avg;
                    }
                }
            }
        }
    }

    /// Largest |second derivative| over a uniform probe lattice of the box
    /// `[lower, upper]^m` (`n` probes per axis, capped at 4096 probes).
    /// A cheap stand-in for the subquadratic bound on the Hessian.
    pub fn hessian_sup(&self, lower: f64, upper: f64, n: usize) -> f64 {
        let n = n.max(2);
        let m = self.dim;
        let total = n.saturating_pow(m as u32).min(4096);
        let mut x = vec![0.0; m];
        let mut h = vec![0.0; m * m];
        let mut sup = 0.0f64;
        for idx in 0..total {
            let mut rest = idx;
            for xj in x.iter_mut() {
                let k = rest % n;
                rest /= n;
                *xj = lower + (upper - lower) * k as f64 / (n - 1) as f64;
            }
            self.hessian_into(&x, &mut h);
            sup = h.iter().fold(sup, |acc, v| acc.max(v.abs()));
        }
        sup
    }
}

pub(crate) fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}
