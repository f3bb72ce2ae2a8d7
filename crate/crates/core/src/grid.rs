//! Phase-space points, uniform tensor grids and complex fields sampled on them.
//!
//! Grids include both endpoints: axis `j` carries `points[j]` nodes with
//! spacing `(upper[j] - lower[j]) / (points[j] - 1)`. Fields are stored
//! row-major, last axis fastest. Integrals use the rectangle rule with
//! weight `prod(h)` at every node.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, FgsError, Result};

/// A point `(q, p)` of the 2m-dimensional phase space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhasePoint {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(FgsError::InvalidParameter(
                "phase point needs dimension >= 1".into(),
            ));
        }
        check_dim(q.len(), p.len())?;
        if q.iter().chain(p.iter()).any(|v| !v.is_finite()) {
            return Err(FgsError::NonFinite("phase point".into()));
        }
        Ok(Self { q, p })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    lower: Vec<f64>,
    upper: Vec<f64>,
    points: Vec<usize>,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, points: Vec<usize>) -> Result<Self> {
        if lower.is_empty() {
            return Err(FgsError::InvalidParameter("grid needs at least one axis".into()));
        }
        check_dim(lower.len(), upper.len())?;
        check_dim(lower.len(), points.len())?;
        for j in 0..lower.len() {
            if !(lower[j].is_finite() && upper[j].is_finite() && lower[j] < upper[j]) {
                return Err(FgsError::InvalidParameter(format!(
                    "grid axis {j}: need finite lower < upper, got [{}, {}]",
                    lower[j], upper[j]
                )));
            }
            if points[j] < 2 {
                return Err(FgsError::InvalidParameter(format!(
                    "grid axis {j}: need at least 2 points, got {}",
                    points[j]
                )));
            }
        }
        Ok(Self { lower, upper, points })
    }

    /// Same box and resolution on every axis.
    pub fn cube(dim: usize, lower: f64, upper: f64, points: usize) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim], vec![points; dim])
    }

    /// Smallest grid on `[lower, upper]^dim` whose spacing does not exceed `max_spacing`.
    pub fn with_max_spacing(dim: usize, lower: f64, upper: f64, max_spacing: f64) -> Result<Self> {
        if !(max_spacing > 0.0) {
            return Err(FgsError::InvalidParameter("max spacing must be positive".into()));
        }
        let n = ((upper - lower) / max_spacing).ceil() as usize + 1;
        Self::cube(dim, lower, upper, n.max(2))
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn points_per_axis(&self) -> &[usize] {
        &self.points
    }

    pub fn spacing(&self) -> Vec<f64> {
        (0..self.dim()).map(|j| self.axis_spacing(j)).collect()
    }

    pub fn axis_spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.points[axis] - 1) as f64
    }

    /// Quadrature weight of a single node.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn axis_coordinate(&self, axis: usize, k: usize) -> f64 {
        self.lower[axis] + k as f64 * self.axis_spacing(axis)
    }

    /// Coordinates of the node with flat (row-major) index `index`.
    pub fn point(&self, index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.point_into(index, &mut out);
        out
    }

    pub fn point_into(&self, mut index: usize, out: &mut [f64]) {
        for axis in (0..self.dim()).rev() {
            let k = index % self.points[axis];
            index /= self.points[axis];
            out[axis] = self.axis_coordinate(axis, k);
        }
    }

    /// All nodes in row-major order.
    pub fn grid_points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Row-major strides, last axis has stride 1.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dim()];
        for axis in (0..self.dim().saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * self.points[axis + 1];
        }
        strides
    }
}

/// Complex field on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct WaveField {
    grid: GridSpec,
    values: Vec<Complex64>,
}

impl WaveField {
    pub fn new(grid: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        check_dim(grid.len(), values.len())?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        let values = vec![Complex64::new(0.0, 0.0); grid.len()];
        Self { grid, values }
    }

    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(&[f64]) -> Complex64) -> Self {
        let mut x = vec![0.0; grid.dim()];
        let values = (0..grid.len())
            .map(|i| {
                grid.point_into(i, &mut x);
                f(&x)
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn l2_norm(&self) -> f64 {
        let sum: f64 = self.values.iter().map(|v| v.norm_sqr()).sum();
        (sum * self.grid.cell_volume()).sqrt()
    }

    /// Discrete `<self|other>`, conjugate-linear in `self`.
    pub fn inner(&self, other: &WaveField) -> Result<Complex64> {
        self.same_grid(other)?;
        let sum: Complex64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.conj() * b)
            .sum();
        Ok(sum * self.grid.cell_volume())
    }

    /// `||self - other||` on the shared grid.
    pub fn l2_distance(&self, other: &WaveField) -> Result<f64> {
        self.same_grid(other)?;
        let sum: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        Ok((sum * self.grid.cell_volume()).sqrt())
    }

    pub fn scaled(&self, c: Complex64) -> WaveField {
        WaveField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    fn same_grid(&self, other: &WaveField) -> Result<()> {
        if self.grid != other.grid {
            return Err(FgsError::InvalidParameter("fields live on different grids".into()));
        }
        Ok(())
    }
}

/// L² norm of a real-valued array on `grid` (rectangle rule).
pub fn real_l2_norm(grid: &GridSpec, values: &[f64]) -> f64 {
    (values.iter().map(|v| v * v).sum::<f64>() * grid.cell_volume()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn one_dimensional_nodes() {
        let g = GridSpec::cube(1, -1.0, 1.0, 3).unwrap();
        assert_eq!(g.grid_points(), vec![vec![-1.0], vec![0.0], vec![1.0]]);
    }

    #[test]
    fn tensor_product_is_row_major() {
        let g = GridSpec::cube(2, 0.0, 1.0, 2).unwrap();
        assert_eq!(
            g.grid_points(),
            vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]
        );
        assert_eq!(g.strides(), vec![2, 1]);
    }

    #[test]
    fn spacing_excludes_nothing() {
        let n = 129;
        let g = GridSpec::cube(1, -PI, PI, n).unwrap();
        assert!((g.axis_spacing(0) - 2.0 * PI / (n - 1) as f64).abs() < 1e-15);
    }

    #[test]
    fn invalid_grids_rejected() {
        assert!(GridSpec::new(vec![1.0], vec![0.0], vec![4]).is_err());
        assert!(GridSpec::new(vec![0.0], vec![1.0], vec![1]).is_err());
        assert!(GridSpec::new(vec![0.0, 0.0], vec![1.0], vec![4, 4]).is_err());
        assert!(PhasePoint::new(vec![0.0], vec![f64::NAN]).is_err());
        assert!(PhasePoint::new(vec![], vec![]).is_err());
    }

    #[test]
    fn unit_constant_norm() {
        // Rectangle rule with inclusive endpoints over-counts by one cell.
        for n in [11usize, 101, 1001] {
            let g = GridSpec::cube(1, 0.0, 1.0, n).unwrap();
            let f = WaveField::from_fn(g, |_| Complex64::new(1.0, 0.0));
            let expected = (n as f64 / (n - 1) as f64).sqrt();
            assert!((f.l2_norm() - expected).abs() < 1e-14);
            assert!((f.l2_norm() - 1.0).abs() <= 1.0 / (n - 1) as f64);
        }
    }

    #[test]
    fn zero_field_has_zero_norm() {
        let g = GridSpec::cube(2, 0.0, 1.0, 8).unwrap();
        assert_eq!(WaveField::zeros(g).l2_norm(), 0.0);
    }

    #[test]
    fn normalized_gaussian_packet() {
        // (a/(pi eps))^{1/4} exp(i p (x-q)/eps - a (x-q)^2 / (2 eps)) has unit norm.
        let (a, eps, q, p) = (2.0, 0.01, 0.5, -0.5);
        let g = GridSpec::cube(1, -PI, PI, 4096).unwrap();
        let f = WaveField::from_fn(g, |x| {
            let d = x[0] - q;
            let env = (a / (PI * eps)).powf(0.25) * (-a * d * d / (2.0 * eps)).exp();
            Complex64::from_polar(env, p * d / eps)
        });
        assert!((f.l2_norm() - 1.0).abs() < 1e-6);
    }

    fn field_strategy() -> impl Strategy<Value = (Vec<(f64, f64)>, Vec<(f64, f64)>, (f64, f64))> {
        (
            prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 12),
            prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 12),
            (-3.0..3.0f64, -3.0..3.0f64),
        )
    }

    proptest! {
        #[test]
        fn norm_is_homogeneous_and_inner_is_hermitian((u, v, c) in field_strategy()) {
            let g = GridSpec::new(vec![0.0, -1.0], vec![1.0, 2.0], vec![3, 4]).unwrap();
            let to_field = |w: &[(f64, f64)]| WaveField::new(
                g.clone(),
                w.iter().map(|&(re, im)| Complex64::new(re, im)).collect(),
            ).unwrap();
            let (fu, fv) = (to_field(&u), to_field(&v));
            let c = Complex64::new(c.0, c.1);
            let lhs = fu.scaled(c).l2_norm();
            let rhs = c.norm() * fu.l2_norm();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
            let uv = fu.inner(&fv).unwrap();
            let vu = fv.inner(&fu).unwrap();
            prop_assert!((uv - vu.conj()).norm() <= 1e-12 * (1.0 + uv.norm()));
        }

        #[test]
        fn grid_points_are_reproducible(n0 in 2usize..6, n1 in 2usize..6) {
            let g = GridSpec::new(vec![-1.0, 0.5], vec![2.0, 3.0], vec![n0, n1]).unwrap();
            let a = g.grid_points();
            let b = g.clone().grid_points();
            prop_assert_eq!(a.len(), n0 * n1);
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(x[0].to_bits(), y[0].to_bits());
                prop_assert_eq!(x[1].to_bits(), y[1].to_bits());
            }
        }
    }
}
