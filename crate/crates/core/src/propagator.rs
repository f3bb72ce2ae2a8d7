//! Fixed-step RK4 integration of frozen-Gaussian trajectories and of
//! Hagedorn wave-packet parameters.
//!
//! Each trajectory carries `(Q, P, S, A)` together with the variational
//! Jacobian `J = D(Q, P) / D(q, p)`. The amplitude obeys
//! `dA/dt = (A/2) tr(Z^{-1} dZ/dt)` with `Z = d_z(Q + iP)`, `d_z = d_q - i d_p`,
//! which is assembled from the blocks of `J` at every stage.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, FgsError, Result};
use crate::grid::PhasePoint;
use crate::initial::GaussianPacket;
use crate::potential::Potential;
use crate::sampler::SampledEnsemble;

/// Above this pivot-ratio estimate `Z` is treated as singular.
pub const Z_CONDITION_LIMIT: f64 = 1e12;
/// Hagedorn symplecticity drift that triggers a warning.
pub const HAGEDORN_WARN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryState {
    pub t: f64,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub s: f64,
    pub a: Complex64,
    /// `D(Q, P) / D(q, p)`, row-major 2m×2m: rows `0..m` hold `dQ`, rows `m..2m` hold `dP`;
    /// columns `0..m` differentiate in `q`, columns `m..2m` in `p`.
    pub jac: Vec<f64>,
    /// Largest pivot-ratio condition estimate of `Z` seen so far.
    pub max_z_condition: f64,
}

impl TrajectoryState {
    pub fn initial(z0: &PhasePoint, a0: Complex64) -> Self {
        let m = z0.dim();
        let n = 2 * m;
        let mut jac = vec![0.0; n * n];
        for i in 0..n {
            jac[i * n + i] = 1.0;
        }
        Self { t: 0.0, q: z0.q.clone(), p: z0.p.clone(), s: 0.0, a: a0, jac, max_z_condition: 1.0 }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// `Z = (dQ/dq + dP/dp) + i (dP/dq - dQ/dp)`, row-major m×m.
    pub fn z_matrix(&self) -> Vec<Complex64> {
        let m = self.dim();
        let mut z = vec![Complex64::new(0.0, 0.0); m * m];
        assemble_z(&self.jac, m, &mut z);
        z
    }

    /// `max |J^T Omega J - Omega|` with `Omega = ((0, I), (-I, 0))`.
    pub fn symplectic_residual(&self) -> f64 {
        symplectic_residual(&self.jac, self.dim())
    }

    /// Residual scaled by `max(1, |J|_max^2)`, the roundoff floor of `J^T Omega J`
    /// once the flow is strongly stretching.
    pub fn symplectic_residual_relative(&self) -> f64 {
        let big = self.jac.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        self.symplectic_residual() / (big * big)
    }

    /// `H = E(Q) + |P|^2 / 2`.
    pub fn energy(&self, pot: &Potential) -> f64 {
        pot.value_unchecked(&self.q) + 0.5 * self.p.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn phase_point(&self) -> PhasePoint {
        PhasePoint { q: self.q.clone(), p: self.p.clone() }
    }
}

pub(crate) fn symplectic_residual(jac: &[f64], m: usize) -> f64 {
    let n = 2 * m;
    let omega = |i: usize, j: usize| -> f64 {
        if i < m && j == i + m {
            1.0
        } else if i >= m && j + m == i {
            -1.0
        } else {
            0.0
        }
    };
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            // (J^T Omega J)_{ij} = sum_k J_{k i} (Omega J)_{k j}
            let mut acc = 0.0;
            for k in 0..m {
                acc += jac[k * n + i] * jac[(k + m) * n + j] - jac[(k + m) * n + i] * jac[k * n + j];
            }
            worst = worst.max((acc - omega(i, j)).abs());
        }
    }
    worst
}

fn assemble_z(jac: &[f64], m: usize, z: &mut [Complex64]) {
    let n = 2 * m;
    for i in 0..m {
        for j in 0..m {
            let qq = jac[i * n + j];
            let qp = jac[i * n + m + j];
            let pq = jac[(i + m) * n + j];
            let pp = jac[(i + m) * n + m + j];
            z[i * m + j] = Complex64::new(qq + pp, pq - qp);
        }
    }
}

/// Classical RK4 step on a flat real state.
pub(crate) fn rk4_step<F>(y: &mut [f64], h: f64, work: &mut Rk4Work, mut f: F) -> Result<()>
where
    F: FnMut(&[f64], &mut [f64], f64) -> Result<()>,
{
    let n = y.len();
    work.resize(n);
    let Rk4Work { k1, k2, k3, k4, tmp } = work;
    f(y, k1, 0.0)?;
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    f(tmp, k2, 0.5)?;
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    f(tmp, k3, 0.5)?;
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    f(tmp, k4, 1.0)?;
    for i in 0..n {
        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(())
}

#[derive(Debug, Default)]
pub(crate) struct Rk4Work {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Work {
    fn resize(&mut self, n: usize) {
        for v in [&mut self.k1, &mut self.k2, &mut self.k3, &mut self.k4, &mut self.tmp] {
            v.resize(n, 0.0);
        }
    }
}

/// Step sizes from `t0` to `t_final`: whole steps of `dt` and a final
/// partial step landing exactly on `t_final`.
pub(crate) fn step_schedule(t0: f64, t_final: f64, dt: f64) -> Result<Vec<(f64, f64)>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(FgsError::InvalidParameter(format!("time step must be positive, got {dt}")));
    }
    if !(t_final >= t0) || !t_final.is_finite() {
        return Err(FgsError::InvalidParameter(format!(
            "final time {t_final} must not precede start {t0}"
        )));
    }
    let span = t_final - t0;
    let ratio = span / dt;
    let mut whole = ratio.round();
    if (ratio - whole).abs() > 1e-9 * ratio.max(1.0) {
        whole = ratio.floor();
    }
    let whole = whole as usize;
    let mut steps = Vec::with_capacity(whole + 1);
    for k in 0..whole {
        steps.push((t0 + k as f64 * dt, dt));
    }
    let covered = whole as f64 * dt;
    let rest = span - covered;
    if rest > 1e-12 * dt {
        steps.push((t0 + covered, rest));
    }
    Ok(steps)
}

/// Scratch buffers for one trajectory's right-hand side.
struct FgaWork {
    grad: Vec<f64>,
    hess: Vec<f64>,
    z: Vec<Complex64>,
    w: Vec<Complex64>,
    rk: Rk4Work,
}

impl FgaWork {
    fn new(m: usize) -> Self {
        Self {
            grad: vec![0.0; m],
            hess: vec![0.0; m * m],
            z: vec![Complex64::new(0.0, 0.0); m * m],
            w: vec![Complex64::new(0.0, 0.0); m * m],
            rk: Rk4Work::default(),
        }
    }
}

/// Flat layout: `[Q (m), P (m), S, Re A, Im A, J (4m^2)]`.
fn pack(state: &TrajectoryState) -> Vec<f64> {
    let mut y = Vec::with_capacity(2 * state.dim() + 3 + state.jac.len());
    y.extend_from_slice(&state.q);
    y.extend_from_slice(&state.p);
    y.push(state.s);
    y.push(state.a.re);
    y.push(state.a.im);
    y.extend_from_slice(&state.jac);
    y
}

fn unpack(y: &[f64], m: usize, state: &mut TrajectoryState) {
    state.q.copy_from_slice(&y[..m]);
    state.p.copy_from_slice(&y[m..2 * m]);
    state.s = y[2 * m];
    state.a = Complex64::new(y[2 * m + 1], y[2 * m + 2]);
    state.jac.copy_from_slice(&y[2 * m + 3..]);
}

/// `tr(Z^{-1} W)` by LU with partial pivoting. Overwrites `z` and `w`.
/// Returns the trace and the pivot-ratio condition estimate.
pub(crate) fn trace_solve(z: &mut [Complex64], w: &mut [Complex64], m: usize) -> (Complex64, f64) {
    let mut pmax = 0.0f64;
    let mut pmin = f64::INFINITY;
    for col in 0..m {
        let mut piv = col;
        let mut best = z[col * m + col].norm();
        for r in (col + 1)..m {
            let v = z[r * m + col].norm();
            if v > best {
                best = v;
                piv = r;
            }
        }
        pmax = pmax.max(best);
        pmin = pmin.min(best);
        if best == 0.0 {
            return (Complex64::new(f64::NAN, f64::NAN), f64::INFINITY);
        }
        if piv != col {
            for c in 0..m {
                z.swap(col * m + c, piv * m + c);
                w.swap(col * m + c, piv * m + c);
            }
        }
        let d = z[col * m + col];
        for r in (col + 1)..m {
            let f = z[r * m + col] / d;
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            for c in col..m {
                let v = z[col * m + c];
                z[r * m + c] -= f * v;
            }
            for c in 0..m {
                let v = w[col * m + c];
                w[r * m + c] -= f * v;
            }
        }
    }
    // back substitution; only the diagonal of X = Z^{-1} W is needed,
    // but every column requires the full triangular solve
    let mut trace = Complex64::new(0.0, 0.0);
    let mut x = vec![Complex64::new(0.0, 0.0); m];
    for c in 0..m {
        for r in (0..m).rev() {
            let mut acc = w[r * m + c];
            for k in (r + 1)..m {
                acc -= z[r * m + k] * x[k];
            }
            x[r] = acc / z[r * m + r];
        }
        trace += x[c];
    }
    (trace, pmax / pmin)
}

fn fga_rhs_flat(
    y: &[f64],
    dy: &mut [f64],
    m: usize,
    pot: &Potential,
    work: &mut FgaWork,
    with_amplitude: bool,
) -> f64 {
    let n = 2 * m;
    let (q, rest) = y.split_at(m);
    let p = &rest[..m];
    pot.gradient_into(q, &mut work.grad);
    pot.hessian_into(q, &mut work.hess);
    for i in 0..m {
        dy[i] = p[i];
        dy[m + i] = -work.grad[i];
    }
    dy[2 * m] = 0.5 * p.iter().map(|v| v * v).sum::<f64>() - pot.value_unchecked(q);
    let jac = &y[2 * m + 3..];
    {
        let djac = &mut dy[2 * m + 3..];
        // d/dt [Jq; Jp] = [Jp; -H Jq]
        djac[..m * n].copy_from_slice(&jac[m * n..]);
        for i in 0..m {
            for c in 0..n {
                let mut acc = 0.0;
                for k in 0..m {
                    acc += work.hess[i * m + k] * jac[k * n + c];
                }
                djac[(m + i) * n + c] = -acc;
            }
        }
    }
    if !with_amplitude {
        dy[2 * m + 1] = 0.0;
        dy[2 * m + 2] = 0.0;
        return 1.0;
    }
    // dZ/dt = d_z P - i H d_z Q with d_z Q = Jqq - i Jqp and d_z P = Jpq - i Jpp
    assemble_z(jac, m, &mut work.z);
    for i in 0..m {
        for j in 0..m {
            let mut hq = Complex64::new(0.0, 0.0);
            for k in 0..m {
                let h = work.hess[i * m + k];
                hq += h * Complex64::new(jac[k * n + j], -jac[k * n + m + j]);
            }
            let dzp = Complex64::new(jac[(i + m) * n + j], -jac[(i + m) * n + m + j]);
            work.w[i * m + j] = dzp - Complex64::i() * hq;
        }
    }
    let (trace, cond) = trace_solve(&mut work.z, &mut work.w, m);
    let a = Complex64::new(y[2 * m + 1], y[2 * m + 2]);
    let da = 0.5 * a * trace;
    dy[2 * m + 1] = da.re;
    dy[2 * m + 2] = da.im;
    cond
}

/// Time derivative of the full trajectory state.
pub fn fga_rhs(state: &TrajectoryState, pot: &Potential) -> Result<TrajectoryState> {
    let m = state.dim();
    check_dim(pot.dim(), m)?;
    let y = pack(state);
    let mut dy = vec![0.0; y.len()];
    let mut work = FgaWork::new(m);
    let cond = fga_rhs_flat(&y, &mut dy, m, pot, &mut work, true);
    if !(cond <= Z_CONDITION_LIMIT) {
        return Err(FgsError::SingularZ { t: state.t, condition: cond });
    }
    let mut out = state.clone();
    unpack(&dy, m, &mut out);
    out.t = 1.0;
    Ok(out)
}

fn integrate(
    state: &mut TrajectoryState,
    pot: &Potential,
    t_final: f64,
    dt: f64,
    with_amplitude: bool,
) -> Result<()> {
    let m = state.dim();
    check_dim(pot.dim(), m)?;
    let mut y = pack(state);
    let mut work = FgaWork::new(m);
    let mut rk = std::mem::take(&mut work.rk);
    let mut worst = state.max_z_condition;
    for (t0, h) in step_schedule(state.t, t_final, dt)? {
        rk4_step(&mut y, h, &mut rk, |yy, dy, frac| {
            let cond = fga_rhs_flat(yy, dy, m, pot, &mut work, with_amplitude);
            if !(cond <= Z_CONDITION_LIMIT) {
                return Err(FgsError::SingularZ { t: t0 + frac * h, condition: cond });
            }
            worst = worst.max(cond);
            Ok(())
        })?;
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(FgsError::NonFinite("trajectory integration".into()));
    }
    unpack(&y, m, state);
    state.t = t_final;
    state.max_z_condition = worst;
    Ok(())
}

/// RK4 from `(q, p, S = 0, A0, J = I)` to `t_final`.
pub fn propagate_trajectory(
    z0: &PhasePoint,
    a0: Complex64,
    pot: &Potential,
    t_final: f64,
    dt: f64,
) -> Result<TrajectoryState> {
    let mut state = TrajectoryState::initial(z0, a0);
    integrate(&mut state, pot, t_final, dt, true)?;
    Ok(state)
}

/// Continue an existing state to `t_final`.
pub fn continue_trajectory(
    state: &TrajectoryState,
    pot: &Potential,
    t_final: f64,
    dt: f64,
) -> Result<TrajectoryState> {
    let mut next = state.clone();
    integrate(&mut next, pot, t_final, dt, true)?;
    Ok(next)
}

/// Continue every state to `t_final`; output order follows input order.
pub fn continue_ensemble(
    states: &[TrajectoryState],
    pot: &Potential,
    t_final: f64,
    dt: f64,
) -> Result<Vec<TrajectoryState>> {
    states
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            continue_trajectory(s, pot, t_final, dt)
                .map_err(|e| FgsError::Trajectory { index, source: Box::new(e) })
        })
        .collect()
}

/// Propagate every sample of an ensemble; output order follows input order.
///
/// For potentials with a constant Hessian the variational equations and
/// the amplitude factor `A(t)/A(0)` are the same for every trajectory, so
/// they are integrated once and shared.
pub fn propagate_ensemble(
    ens: &SampledEnsemble,
    a0s: &[Complex64],
    pot: &Potential,
    t_final: f64,
    dt: f64,
) -> Result<Vec<TrajectoryState>> {
    propagate_points(&ens.points, a0s, pot, t_final, dt)
}

pub fn propagate_points(
    points: &[PhasePoint],
    a0s: &[Complex64],
    pot: &Potential,
    t_final: f64,
    dt: f64,
) -> Result<Vec<TrajectoryState>> {
    check_dim(points.len(), a0s.len())?;
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let m = points[0].dim();
    check_dim(pot.dim(), m)?;
    step_schedule(0.0, t_final, dt)?;
    let shared = if pot.has_constant_hessian() {
        let origin = PhasePoint { q: vec![0.0; m], p: vec![0.0; m] };
        Some(propagate_trajectory(&origin, Complex64::new(1.0, 0.0), pot, t_final, dt)?)
    } else {
        None
    };
    points
        .par_iter()
        .zip(a0s.par_iter())
        .enumerate()
        .map(|(index, (z, &a0))| {
            let wrap = |e| FgsError::Trajectory { index, source: Box::new(e) };
            match &shared {
                Some(reference) => {
                    let mut state = TrajectoryState::initial(z, a0);
                    integrate(&mut state, pot, t_final, dt, false).map_err(wrap)?;
                    state.a = a0 * reference.a;
                    state.jac.copy_from_slice(&reference.jac);
                    state.max_z_condition = reference.max_z_condition;
                    Ok(state)
                }
                None => propagate_trajectory(z, a0, pot, t_final, dt).map_err(wrap),
            }
        })
        .collect()
}

/// Parameters of a Hagedorn Gaussian: centre `(q_H, p_H)`, complex width
/// matrices `Q_H`, `P_H` (row-major m×m) and action `S_H`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HagedornState {
    pub t: f64,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub qm: Vec<Complex64>,
    pub pm: Vec<Complex64>,
    pub s: f64,
}

impl HagedornState {
    /// Exact representation of a Gaussian packet:
    /// `Q_H(0) = A^{-1/2}`, `P_H(0) = i A^{1/2}`, so that `P_H Q_H^{-1} = i A`.
    pub fn from_packet(packet: &GaussianPacket) -> Self {
        let m = packet.dim();
        let mut qm = vec![Complex64::new(0.0, 0.0); m * m];
        let mut pm = qm.clone();
        for j in 0..m {
            let r = packet.a[j].sqrt();
            qm[j * m + j] = Complex64::new(1.0 / r, 0.0);
            pm[j * m + j] = Complex64::new(0.0, r);
        }
        Self { t: 0.0, q: packet.q_tilde.clone(), p: packet.p_tilde.clone(), qm, pm, s: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// `(max |Q^T P - P^T Q|, max |Q^* P - P^* Q - 2i I|)`.
    pub fn symplectic_residuals(&self) -> (f64, f64) {
        let m = self.dim();
        let (q, p) = (&self.qm, &self.pm);
        let mut r1 = 0.0f64;
        let mut r2 = 0.0f64;
        for i in 0..m {
            for j in 0..m {
                let mut t1 = Complex64::new(0.0, 0.0);
                let mut t2 = Complex64::new(0.0, 0.0);
                for k in 0..m {
                    t1 += q[k * m + i] * p[k * m + j] - p[k * m + i] * q[k * m + j];
                    t2 += q[k * m + i].conj() * p[k * m + j] - p[k * m + i].conj() * q[k * m + j];
                }
                if i == j {
                    t2 -= Complex64::new(0.0, 2.0);
                }
                r1 = r1.max(t1.norm());
                r2 = r2.max(t2.norm());
            }
        }
        (r1, r2)
    }

    pub fn symplectic_residual(&self) -> f64 {
        let (a, b) = self.symplectic_residuals();
        a.max(b)
    }

    fn pack(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(2 * self.dim() + 4 * self.qm.len() + 1);
        y.extend_from_slice(&self.q);
        y.extend_from_slice(&self.p);
        for c in self.qm.iter().chain(&self.pm) {
            y.push(c.re);
            y.push(c.im);
        }
        y.push(self.s);
        y
    }

    fn unpack(&mut self, y: &[f64]) {
        let m = self.dim();
        let mm = m * m;
        self.q.copy_from_slice(&y[..m]);
        self.p.copy_from_slice(&y[m..2 * m]);
        let base = 2 * m;
        for k in 0..mm {
            self.qm[k] = Complex64::new(y[base + 2 * k], y[base + 2 * k + 1]);
            self.pm[k] = Complex64::new(y[base + 2 * mm + 2 * k], y[base + 2 * mm + 2 * k + 1]);
        }
        self.s = y[base + 4 * mm];
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HagedornRun {
    pub state: HagedornState,
    /// Largest symplecticity residual observed at step ends.
    pub max_symplectic_residual: f64,
    pub warnings: Vec<String>,
}

/// RK4 for `q' = p`, `p' = -grad E(q)`, `Q' = P`, `P' = -grad^2 E(q) Q`,
/// `S' = |p|^2/2 - E(q)`.
pub fn hagedorn_propagate(
    initial: &HagedornState,
    pot: &Potential,
    t_final: f64,
    dt: f64,
) -> Result<HagedornRun> {
    let m = initial.dim();
    check_dim(pot.dim(), m)?;
    let mm = m * m;
    let mut state = initial.clone();
    let mut y = state.pack();
    let mut rk = Rk4Work::default();
    let mut grad = vec![0.0; m];
    let mut hess = vec![0.0; mm];
    let mut worst = initial.symplectic_residual();
    for (_, h) in step_schedule(initial.t, t_final, dt)? {
        rk4_step(&mut y, h, &mut rk, |yy, dy, _| {
            let q = &yy[..m];
            let p = &yy[m..2 * m];
            pot.gradient_into(q, &mut grad);
            pot.hessian_into(q, &mut hess);
            for i in 0..m {
                dy[i] = p[i];
                dy[m + i] = -grad[i];
            }
            let base = 2 * m;
            let pm_off = base + 2 * mm;
            dy[base..pm_off].copy_from_slice(&yy[pm_off..pm_off + 2 * mm]);
            for i in 0..m {
                for j in 0..m {
                    let (mut re, mut im) = (0.0, 0.0);
                    for k in 0..m {
                        re += hess[i * m + k] * yy[base + 2 * (k * m + j)];
                        im += hess[i * m + k] * yy[base + 2 * (k * m + j) + 1];
                    }
                    dy[pm_off + 2 * (i * m + j)] = -re;
                    dy[pm_off + 2 * (i * m + j) + 1] = -im;
                }
            }
            dy[base + 4 * mm] = 0.5 * p.iter().map(|v| v * v).sum::<f64>() - pot.value_unchecked(q);
            Ok(())
        })?;
        state.unpack(&y);
        worst = worst.max(state.symplectic_residual());
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(FgsError::NonFinite("Hagedorn integration".into()));
    }
    state.t = t_final;
    let mut warnings = Vec::new();
    if worst > HAGEDORN_WARN {
        warnings.push(format!("symplecticity drift {worst:.3e} exceeds {HAGEDORN_WARN:.0e}"));
    }
    Ok(HagedornRun { state, max_symplectic_residual: worst, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pp(q: &[f64], p: &[f64]) -> PhasePoint {
        PhasePoint::new(q.to_vec(), p.to_vec()).unwrap()
    }

    #[test]
    fn harmonic_rhs_at_start() {
        let pot = Potential::harmonic(1);
        let st = TrajectoryState::initial(&pp(&[0.0], &[1.0]), Complex64::new(1.0, 0.0));
        let d = fga_rhs(&st, &pot).unwrap();
        assert_eq!(d.q, vec![1.0]);
        assert_eq!(d.p, vec![0.0]);
        assert_eq!(d.s, 0.5);
        // Z = 2, dZ/dt = -i - i = -2i, dA/dt = A/2 * (-i)
        assert!((d.a - Complex64::new(0.0, -0.5)).norm() < 1e-15);
    }

    #[test]
    fn harmonic_closed_form() {
        let pot = Potential::harmonic(1);
        let a0 = Complex64::new(0.7, -0.2);
        let st = propagate_trajectory(&pp(&[0.0], &[1.0]), a0, &pot, 0.5, 0.01).unwrap();
        let t: f64 = 0.5;
        assert!((st.q[0] - t.sin()).abs() < 1e-9);
        assert!((st.p[0] - t.cos()).abs() < 1e-9);
        assert!((st.s - (2.0 * t).sin() / 4.0).abs() < 1e-9);
        let exact = a0 * Complex64::from_polar(1.0, -t / 2.0);
        assert!((st.a - exact).norm() < 1e-8 * a0.norm());
        assert!((st.a.norm() - a0.norm()).abs() < 1e-8 * a0.norm());
    }

    #[test]
    fn null_potential_amplitude() {
        for m in [1usize, 2, 3] {
            let pot = Potential::null(m);
            let a0 = Complex64::new(1.3, 0.4);
            let z = pp(&vec![0.2; m], &vec![-0.7; m]);
            let st = propagate_trajectory(&z, a0, &pot, 0.5, 0.01).unwrap();
            let exact = a0 * (Complex64::new(2.0, -0.5) / 2.0).powf(m as f64 / 2.0);
            assert!((st.a - exact).norm() < 1e-8 * exact.norm(), "m={m}");
            let zm = st.z_matrix();
            for i in 0..m {
                assert!((zm[i * m + i] - Complex64::new(2.0, -0.5)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn harmonic_amplitude_in_three_dimensions() {
        let pot = Potential::harmonic(3);
        let z = pp(&[0.3, -0.1, 0.9], &[0.0, 1.0, -0.4]);
        let st = propagate_trajectory(&z, Complex64::new(1.0, 0.0), &pot, 2.0, 0.01).unwrap();
        let exact = Complex64::from_polar(1.0, -3.0 * 2.0 / 2.0);
        assert!((st.a - exact).norm() < 1e-8);
    }

    #[test]
    fn zero_final_time_is_identity() {
        let pot = Potential::torsion(2);
        let z = pp(&[0.3, 0.1], &[0.2, 0.0]);
        let a0 = Complex64::new(0.5, 0.5);
        let st = propagate_trajectory(&z, a0, &pot, 0.0, 0.01).unwrap();
        assert_eq!(st, TrajectoryState::initial(&z, a0));
    }

    #[test]
    fn partial_final_step_lands_on_target() {
        let steps = step_schedule(0.0, 0.537, 0.01).unwrap();
        assert_eq!(steps.len(), 54);
        let total: f64 = steps.iter().map(|s| s.1).sum();
        assert!((total - 0.537).abs() < 1e-14);
        assert_eq!(step_schedule(0.0, 0.5, 0.01).unwrap().len(), 50);
        assert!(step_schedule(0.0, -1.0, 0.01).is_err());
        assert!(step_schedule(0.0, 1.0, 0.0).is_err());
    }

    fn catalog(m: usize) -> Vec<Potential> {
        vec![
            Potential::harmonic(m),
            Potential::torsion(m),
            Potential::gaussian_bump(m, 1.0),
            Potential::gaussian_bump(m, 10.0),
            Potential::constant(m, 10.0),
            Potential::null(m),
        ]
    }

    /// Step size at which RK4 holds the 1e-8 bounds. The bumps have
    /// curvature up to 10c near the origin and need a smaller step.
    pub(crate) fn conserving_dt(pot: &Potential) -> f64 {
        match pot.kind() {
            crate::potential::PotentialKind::GaussianBump { height } if *height > 1.0 => 0.001,
            crate::potential::PotentialKind::GaussianBump { .. } => 0.005,
            _ => 0.01,
        }
    }

    #[test]
    fn energy_and_symplecticity() {
        for m in [1usize, 2] {
            for pot in catalog(m) {
                let dt = conserving_dt(&pot);
                for (q, p) in [(0.5, -0.5), (-1.0, 0.3), (1.2, 1.0), (0.0, 0.0)] {
                    let z = pp(&vec![q; m], &vec![p; m]);
                    let e0 = 0.5 * m as f64 * p * p + pot.eval(&z.q).unwrap();
                    let st = propagate_trajectory(&z, Complex64::new(1.0, 0.0), &pot, 2.0, dt).unwrap();
                    let de = (st.energy(&pot) - e0).abs();
                    assert!(de <= 1e-8, "{pot:?} z={z:?}: energy drift {de:e}");
                    let r = st.symplectic_residual_relative();
                    assert!(r <= 1e-8, "{pot:?}: symplectic residual {r:e}");
                    if dt == 0.01 {
                        assert!(st.symplectic_residual() <= 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn tall_bump_needs_the_smaller_step() {
        // documents the limitation: at dt = 0.01 the energy error on the barrier exceeds 1e-8
        let pot = Potential::gaussian_bump(1, 10.0);
        let z = pp(&[0.5], &[-0.5]);
        let e0 = pot.eval(&[0.5]).unwrap() + 0.125;
        let st = propagate_trajectory(&z, Complex64::new(1.0, 0.0), &pot, 2.0, 0.01).unwrap();
        assert!((st.energy(&pot) - e0).abs() > 1e-8);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let pot = Potential::harmonic(1);
        let z = pp(&[0.0], &[1.0]);
        let t = 2.0f64;
        let err = |dt: f64| {
            let st = propagate_trajectory(&z, Complex64::new(1.0, 0.0), &pot, t, dt).unwrap();
            (st.q[0] - t.sin()).abs().max((st.p[0] - t.cos()).abs())
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 16.0).abs() <= 3.2, "ratio {ratio}");
    }

    #[test]
    fn flow_composition() {
        let pot = Potential::torsion(2);
        let z = pp(&[0.4, -1.0], &[0.9, 0.1]);
        let a0 = Complex64::new(1.0, 0.2);
        let full = propagate_trajectory(&z, a0, &pot, 1.0, 0.01).unwrap();
        let half = propagate_trajectory(&z, a0, &pot, 0.4, 0.01).unwrap();
        let rest = continue_trajectory(&half, &pot, 1.0, 0.01).unwrap();
        for j in 0..2 {
            assert!((full.q[j] - rest.q[j]).abs() < 1e-10);
            assert!((full.p[j] - rest.p[j]).abs() < 1e-10);
        }
        assert!((full.s - rest.s).abs() < 1e-10);
        assert!((full.a - rest.a).norm() < 1e-10);
        let ens = continue_ensemble(&[half.clone(), half], &pot, 1.0, 0.01).unwrap();
        assert_eq!(ens[1], rest);
    }

    #[test]
    fn shared_variational_flow_matches_direct_integration() {
        let pot = Potential::harmonic(2);
        let points = vec![pp(&[0.1, 0.2], &[0.3, -0.4]), pp(&[-1.0, 0.5], &[0.0, 0.7])];
        let a0s = vec![Complex64::new(1.0, 0.5), Complex64::new(-0.2, 0.3)];
        let ens = propagate_points(&points, &a0s, &pot, 0.5, 0.01).unwrap();
        for (k, st) in ens.iter().enumerate() {
            let direct = propagate_trajectory(&points[k], a0s[k], &pot, 0.5, 0.01).unwrap();
            assert_eq!(st.q, direct.q);
            assert_eq!(st.p, direct.p);
            assert_eq!(st.s, direct.s);
            assert!((st.a - direct.a).norm() < 1e-14);
            for (x, y) in st.jac.iter().zip(&direct.jac) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn ensemble_is_elementwise() {
        let pot = Potential::torsion(1);
        let points: Vec<PhasePoint> =
            (0..6).map(|k| pp(&[0.1 * k as f64], &[1.0 - 0.3 * k as f64])).collect();
        let a0s: Vec<Complex64> = (0..6).map(|k| Complex64::new(1.0, k as f64)).collect();
        let out = propagate_points(&points, &a0s, &pot, 0.3, 0.01).unwrap();
        let single = propagate_trajectory(&points[0], a0s[0], &pot, 0.3, 0.01).unwrap();
        assert_eq!(out[0], single);
        let mut perm: Vec<usize> = (0..6).collect();
        perm.reverse();
        let pts2: Vec<PhasePoint> = perm.iter().map(|&i| points[i].clone()).collect();
        let a2: Vec<Complex64> = perm.iter().map(|&i| a0s[i]).collect();
        let out2 = propagate_points(&pts2, &a2, &pot, 0.3, 0.01).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(out2[k], out[i]);
        }
    }

    #[test]
    fn singular_z_reports_index() {
        // a repulsive quadratic well stretches J exponentially, so Z becomes ill conditioned
        use crate::potential::CustomPotential;
        use std::sync::Arc;
        let custom = CustomPotential {
            value: Arc::new(|x: &[f64]| -50.0 * x[0] * x[0] + 0.5 * x[1] * x[1]),
            gradient: Arc::new(|x: &[f64], g: &mut [f64]| {
                g[0] = -100.0 * x[0];
                g[1] = x[1];
            }),
            hessian: Arc::new(|_x: &[f64], h: &mut [f64]| {
                h.copy_from_slice(&[-100.0, 0.0, 0.0, 1.0]);
            }),
        };
        let pot = Potential::custom(2, custom);
        let points = vec![pp(&[0.0, 0.0], &[0.0, 0.0]); 2];
        let a0s = vec![Complex64::new(1.0, 0.0); 2];
        let err = propagate_points(&points, &a0s, &pot, 5.0, 0.001).unwrap_err();
        match err {
            FgsError::Trajectory { index, source } => {
                assert_eq!(index, 0);
                assert!(matches!(*source, FgsError::SingularZ { .. } | FgsError::NonFinite(_)));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hagedorn_harmonic_closed_form() {
        let packet = GaussianPacket::new(vec![1.2, 1.4], vec![0.5, -0.3], vec![-0.5, 0.8], 0.0256).unwrap();
        let init = HagedornState::from_packet(&packet);
        assert!(init.symplectic_residual() < 1e-15);
        let pot = Potential::harmonic(2);
        let run = hagedorn_propagate(&init, &pot, 0.5, 0.01).unwrap();
        let t: f64 = 0.5;
        for j in 0..2 {
            let q = packet.q_tilde[j] * t.cos() + packet.p_tilde[j] * t.sin();
            let p = packet.p_tilde[j] * t.cos() - packet.q_tilde[j] * t.sin();
            assert!((run.state.q[j] - q).abs() < 1e-9);
            assert!((run.state.p[j] - p).abs() < 1e-9);
        }
        for k in 0..4 {
            let exact = init.qm[k] * t.cos() + init.pm[k] * t.sin();
            assert!((run.state.qm[k] - exact).norm() < 1e-9);
        }
        assert!(run.max_symplectic_residual < 1e-8);
        assert!(run.warnings.is_empty());
    }

    #[test]
    fn hagedorn_drift_is_reported() {
        let packet = GaussianPacket::new(vec![1.0], vec![0.0], vec![0.0], 0.1).unwrap();
        let pot = Potential::gaussian_bump(1, 10.0);
        let run = hagedorn_propagate(&HagedornState::from_packet(&packet), &pot, 3.0, 0.5).unwrap();
        assert!(run.max_symplectic_residual > HAGEDORN_WARN);
        assert_eq!(run.warnings.len(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn symplectic_for_random_starts(q in -1.5f64..1.5, p in -1.5f64..1.5, c in 0.0f64..1.0) {
            let pot = Potential::gaussian_bump(1, c);
            let st = propagate_trajectory(&pp(&[q], &[p]), Complex64::new(1.0, 0.0), &pot, 1.0, 0.01).unwrap();
            prop_assert!(st.symplectic_residual() < 1e-8);
        }

        #[test]
        fn relative_symplecticity_on_tall_bumps(q in -1.5f64..1.5, p in -1.5f64..1.5, c in 1.0f64..10.0) {
            let pot = Potential::gaussian_bump(1, c);
            let st = propagate_trajectory(&pp(&[q], &[p]), Complex64::new(1.0, 0.0), &pot, 1.0, 0.001).unwrap();
            prop_assert!(st.symplectic_residual_relative() < 1e-8);
        }

        #[test]
        fn amplitude_scales_linearly(re in -2.0f64..2.0, im in -2.0f64..2.0) {
            let pot = Potential::torsion(1);
            let z = pp(&[0.3], &[0.4]);
            let unit = propagate_trajectory(&z, Complex64::new(1.0, 0.0), &pot, 0.7, 0.01).unwrap();
            let a0 = Complex64::new(re, im);
            let scaled = propagate_trajectory(&z, a0, &pot, 0.7, 0.01).unwrap();
            prop_assert!((scaled.a - a0 * unit.a).norm() <= 1e-12 * (1.0 + a0.norm()));
        }
    }
}
