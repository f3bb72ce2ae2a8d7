//! Mesh-free quadratic observables `<u_FGS| O |u_FGS>` from closed-form
//! frozen-Gaussian overlaps, and the exact Hagedorn reference.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, FgsError, Result};
use crate::propagator::{HagedornState, TrajectoryState};

/// Pairs whose overlap is below `SCREEN_TAU` are skipped.
pub const SCREEN_TAU: f64 = 1e-16;
/// Allowed deviation of `|prefactor|` from one for the Hagedorn expectations.
pub const PREFACTOR_TOL: f64 = 1e-8;
/// Largest symplecticity residual accepted by [`hagedorn_observables`].
pub const HAGEDORN_SYMPLECTIC_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservableKind {
    Position,
    Momentum,
    Identity,
}

/// How the double sum over pairs is traversed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSum {
    /// Every ordered pair; the imaginary part measures roundoff.
    #[default]
    Full,
    /// Diagonal plus twice the real part over `j < k`. Exactly real, half the work.
    HermitianHalf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservableOptions {
    pub screen: bool,
    pub mode: PairSum,
}

impl Default for ObservableOptions {
    fn default() -> Self {
        Self { screen: true, mode: PairSum::Full }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableResult {
    pub kind: ObservableKind,
    /// The double sum, one entry per component (a single entry for the identity).
    pub raw: Vec<Complex64>,
    /// Double sum with the identity operator.
    pub norm_sq: f64,
    pub normalized: Vec<f64>,
    /// `max |Im raw|`.
    pub imag_residual: f64,
    pub samples: usize,
    pub pairs_screened: u64,
}

impl ObservableResult {
    pub fn raw_real(&self) -> Vec<f64> {
        self.raw.iter().map(|z| z.re).collect()
    }
}

/// Position and momentum from one pass over the pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub position: ObservableResult,
    pub momentum: ObservableResult,
}

/// `exp((i/eps)(S_k - S_j) - (i/2eps)(Q_k - Q_j).(P_k + P_j) - (|dQ|^2 + |dP|^2)/4eps)`.
fn cross_factor(tj: &TrajectoryState, tk: &TrajectoryState, epsilon: f64) -> Complex64 {
    let mut phase = tk.s - tj.s;
    let mut decay = 0.0;
    for a in 0..tj.q.len() {
        let dq = tk.q[a] - tj.q[a];
        let dp = tk.p[a] - tj.p[a];
        phase -= 0.5 * dq * (tk.p[a] + tj.p[a]);
        decay += dq * dq + dp * dp;
    }
    Complex64::from_polar((-decay / (4.0 * epsilon)).exp(), phase / epsilon)
}

fn pair_prefactor(m: usize, epsilon: f64) -> f64 {
    (PI * epsilon).powf(0.5 * m as f64)
}

/// Overlap `<e^{i Theta_j/eps} | x | e^{i Theta_k/eps}>`.
pub fn g_position(tj: &TrajectoryState, tk: &TrajectoryState, epsilon: f64) -> Result<Vec<Complex64>> {
    check_dim(tj.dim(), tk.dim())?;
    let c = pair_prefactor(tj.dim(), epsilon) * cross_factor(tj, tk, epsilon);
    Ok((0..tj.dim())
        .map(|a| c * Complex64::new(0.5 * (tk.q[a] + tj.q[a]), 0.5 * (tk.p[a] - tj.p[a])))
        .collect())
}

/// Overlap `<e^{i Theta_j/eps} | -i eps grad | e^{i Theta_k/eps}>`.
pub fn g_momentum(tj: &TrajectoryState, tk: &TrajectoryState, epsilon: f64) -> Result<Vec<Complex64>> {
    check_dim(tj.dim(), tk.dim())?;
    let c = pair_prefactor(tj.dim(), epsilon) * cross_factor(tj, tk, epsilon);
    Ok((0..tj.dim())
        .map(|a| c * Complex64::new(0.5 * (tk.p[a] + tj.p[a]), 0.5 * (tj.q[a] - tk.q[a])))
        .collect())
}

/// Overlap `<e^{i Theta_j/eps} | e^{i Theta_k/eps}>`.
pub fn g_identity(tj: &TrajectoryState, tk: &TrajectoryState, epsilon: f64) -> Result<Complex64> {
    check_dim(tj.dim(), tk.dim())?;
    Ok(pair_prefactor(tj.dim(), epsilon) * cross_factor(tj, tk, epsilon))
}

/// Single observable; see [`observables_with`].
pub fn observable(
    trajs: &[TrajectoryState],
    pi_values: &[f64],
    epsilon: f64,
    kind: ObservableKind,
) -> Result<ObservableResult> {
    let all = observables_with(trajs, pi_values, epsilon, ObservableOptions::default())?;
    Ok(match kind {
        ObservableKind::Position => all.position,
        ObservableKind::Momentum => all.momentum,
        ObservableKind::Identity => {
            let p = all.position;
            ObservableResult {
                kind,
                raw: vec![Complex64::new(p.norm_sq, 0.0)],
                normalized: vec![1.0],
                imag_residual: 0.0,
                ..p
            }
        }
    })
}

pub fn observables(trajs: &[TrajectoryState], pi_values: &[f64], epsilon: f64) -> Result<Observables> {
    observables_with(trajs, pi_values, epsilon, ObservableOptions::default())
}

/// Terms summed naively before entering the pairwise tree.
const CHUNK: usize = 64;
/// Rows per parallel task.
const ROW_BLOCK: usize = 8;

/// `(2 pi eps)^{-3m} / M^2 sum_{j,k} conj(A_j/pi_j)(A_k/pi_k) g_{j,k}` for position,
/// momentum and identity at once.
pub fn observables_with(
    trajs: &[TrajectoryState],
    pi_values: &[f64],
    epsilon: f64,
    opts: ObservableOptions,
) -> Result<Observables> {
    let n = trajs.len();
    if n == 0 {
        return Err(FgsError::InvalidParameter("observables need at least one trajectory".into()));
    }
    if !(epsilon > 0.0) {
        return Err(FgsError::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    check_dim(n, pi_values.len())?;
    let m = trajs[0].dim();
    let mut w = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n * m);
    let mut p = Vec::with_capacity(n * m);
    for (t, &pi) in trajs.iter().zip(pi_values) {
        check_dim(m, t.dim())?;
        if !(pi > 0.0 && pi.is_finite()) {
            return Err(FgsError::InvalidParameter(format!("sampling density must be positive, got {pi}")));
        }
        w.push(t.a / pi * Complex64::from_polar(1.0, t.s / epsilon));
        q.extend_from_slice(&t.q);
        p.extend_from_slice(&t.p);
    }
    let width = 1 + 2 * m;
    let cutoff = 4.0 * epsilon * (1.0 / SCREEN_TAU).ln();
    let half = opts.mode == PairSum::HermitianHalf;

    // one row j: sum over k (all k, or k > j) of conj(w_j) w_k E_jk [1, pos, mom]
    let row = |j: usize| -> (Vec<Complex64>, u64) {
        let qj = &q[j * m..(j + 1) * m];
        let pj = &p[j * m..(j + 1) * m];
        let wj = w[j].conj();
        let start = if half { j + 1 } else { 0 };
        let mut chunks: Vec<Complex64> = Vec::new();
        let mut acc = vec![Complex64::new(0.0, 0.0); width];
        let mut in_chunk = 0;
        let mut screened = 0u64;
        for k in start..n {
            let qk = &q[k * m..(k + 1) * m];
            let pk = &p[k * m..(k + 1) * m];
            let mut decay = 0.0;
            let mut phase = 0.0;
            for a in 0..m {
                let dq = qk[a] - qj[a];
                let dp = pk[a] - pj[a];
                decay += dq * dq + dp * dp;
                phase -= 0.5 * dq * (pk[a] + pj[a]);
            }
            if opts.screen && decay > cutoff {
                screened += 1;
                continue;
            }
            let c = wj * w[k] * Complex64::from_polar((-decay / (4.0 * epsilon)).exp(), phase / epsilon);
            acc[0] += c;
            for a in 0..m {
                acc[1 + a] += c * Complex64::new(0.5 * (qk[a] + qj[a]), 0.5 * (pk[a] - pj[a]));
                acc[1 + m + a] += c * Complex64::new(0.5 * (pk[a] + pj[a]), 0.5 * (qj[a] - qk[a]));
            }
            in_chunk += 1;
            if in_chunk == CHUNK {
                chunks.extend_from_slice(&acc);
                acc.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                in_chunk = 0;
            }
        }
        chunks.extend_from_slice(&acc);
        (pairwise_sum(&chunks, width), screened)
    };

    let blocks: Vec<(Vec<Complex64>, u64)> = (0..n.div_ceil(ROW_BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut sums = Vec::with_capacity(ROW_BLOCK * width);
            let mut screened = 0;
            for j in b * ROW_BLOCK..((b + 1) * ROW_BLOCK).min(n) {
                let (s, c) = row(j);
                sums.extend(s);
                screened += c;
            }
            (pairwise_sum(&sums, width), screened)
        })
        .collect();
    let mut flat = Vec::with_capacity(blocks.len() * width);
    let mut pairs_screened = 0;
    for (s, c) in blocks {
        flat.extend(s);
        pairs_screened += c;
    }
    let mut total = pairwise_sum(&flat, width);

    if half {
        // off-diagonal pairs appear as t + conj(t); add the real diagonal
        let diag: Vec<Complex64> = (0..n)
            .flat_map(|j| {
                let c = Complex64::new(w[j].norm_sqr(), 0.0);
                let (qj, pj) = (&q[j * m..(j + 1) * m], &p[j * m..(j + 1) * m]);
                std::iter::once(c).chain(qj.iter().map(move |v| c * v)).chain(pj.iter().map(move |v| c * v))
            })
            .collect();
        let diag = pairwise_sum(&diag, width);
        for (t, d) in total.iter_mut().zip(diag) {
            *t = Complex64::new(2.0 * t.re + d.re, 0.0);
        }
    }

    let scale = (2.0 * PI * epsilon).powf(-3.0 * m as f64) * pair_prefactor(m, epsilon) / (n as f64 * n as f64);
    let total: Vec<Complex64> = total.into_iter().map(|v| v * scale).collect();
    let norm_sq = total[0].re;
    if !norm_sq.is_finite() {
        return Err(FgsError::NonFinite("observable norm".into()));
    }
    if norm_sq <= 0.0 {
        return Err(FgsError::NonPositiveNorm(norm_sq));
    }
    let make = |kind: ObservableKind, raw: &[Complex64]| ObservableResult {
        kind,
        raw: raw.to_vec(),
        norm_sq,
        normalized: raw.iter().map(|v| v.re / norm_sq).collect(),
        imag_residual: raw.iter().map(|v| v.im.abs()).fold(0.0, f64::max),
        samples: n,
        pairs_screened,
    };
    Ok(Observables {
        position: make(ObservableKind::Position, &total[1..1 + m]),
        momentum: make(ObservableKind::Momentum, &total[1 + m..]),
    })
}

/// Tree sum of `data.len() / width` records of `width` values each.
fn pairwise_sum(data: &[Complex64], width: usize) -> Vec<Complex64> {
    let records = data.len() / width;
    match records {
        0 => vec![Complex64::new(0.0, 0.0); width],
        1 => data.to_vec(),
        _ => {
            let mid = records / 2;
            let (l, r) = data.split_at(mid * width);
            let mut out = pairwise_sum(l, width);
            for (o, v) in out.iter_mut().zip(pairwise_sum(r, width)) {
                *o += v;
            }
            out
        }
    }
}

/// Exact position and momentum expectations of a Hagedorn packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HagedornObservables {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    /// `det(Im(P Q^{-1}))^{-1/2} / det Q`; unit modulus for symplectic data.
    pub prefactor: Complex64,
}

fn cmatrix(m: usize, v: &[Complex64]) -> DMatrix<Complex64> {
    DMatrix::from_row_slice(m, m, v)
}

/// Expectations of `x` and `-i eps grad` for the normalized packet: `(q_H, p_H)`.
pub fn hagedorn_observables(state: &HagedornState) -> Result<HagedornObservables> {
    let m = state.dim();
    let residual = state.symplectic_residual();
    if !(residual <= HAGEDORN_SYMPLECTIC_TOL) {
        return Err(FgsError::Symplecticity { residual, tolerance: HAGEDORN_SYMPLECTIC_TOL });
    }
    let qm = cmatrix(m, &state.qm);
    let pm = cmatrix(m, &state.pm);
    let det_q = qm.determinant();
    let inv = qm
        .try_inverse()
        .ok_or_else(|| FgsError::InvalidParameter("Hagedorn Q matrix is singular".into()))?;
    let b = pm * inv;
    let im_b = DMatrix::from_fn(m, m, |i, j| b[(i, j)].im);
    let det_im = im_b.determinant();
    if !(det_im > 0.0) {
        return Err(FgsError::InvalidParameter(format!("Im(P Q^-1) is not positive definite (det {det_im})")));
    }
    let prefactor = det_im.powf(-0.5) / det_q;
    if !((prefactor.norm() - 1.0).abs() <= PREFACTOR_TOL) {
        return Err(FgsError::InvalidParameter(format!(
            "Hagedorn prefactor has modulus {}, expected 1; check against quadrature of the packet",
            prefactor.norm()
        )));
    }
    Ok(HagedornObservables { position: state.q.clone(), momentum: state.p.clone(), prefactor })
}

/// Hagedorn ground packet at `x`, principal branch of `(det Q)^{-1/2}`.
pub fn hagedorn_wave(state: &HagedornState, epsilon: f64, x: &[f64]) -> Result<Complex64> {
    let m = state.dim();
    check_dim(m, x.len())?;
    let qm = cmatrix(m, &state.qm);
    let det_q = qm.determinant();
    let lu = qm.lu();
    let d = DVector::from_iterator(m, x.iter().zip(&state.q).map(|(x, q)| Complex64::new(x - q, 0.0)));
    // (x-q)^T P Q^{-1} (x-q) = ((P^T)... ) computed as d^T P (Q^{-1} d)
    let y = lu
        .solve(&d)
        .ok_or_else(|| FgsError::InvalidParameter("Hagedorn Q matrix is singular".into()))?;
    let pm = cmatrix(m, &state.pm);
    let quad = d.transpose() * (pm * y);
    let lin: f64 = state.p.iter().zip(x.iter().zip(&state.q)).map(|(p, (x, q))| p * (x - q)).sum();
    let i = Complex64::new(0.0, 1.0);
    let expo = i / (2.0 * epsilon) * quad[(0, 0)] + i * lin / epsilon + i * state.s / epsilon;
    Ok((PI * epsilon).powf(-0.25 * m as f64) * det_q.sqrt().inv() * expo.exp())
}
