//! FGS fields against split-step references on the same periodic nodes.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{FgsError, Result};
use crate::grid::WaveField;
use crate::initial::{caustic_wkb_1d, GaussianPacket, InitialData};
use crate::metrics::{ErrorReport, Metric};
use crate::potential::Potential;
use crate::propagator::{continue_ensemble, propagate_ensemble};
use crate::reconstruction::{current_density_field, current_from_gradient, density_field, reconstruct};
use crate::reference::{sp2_solve, spectral_gradient, PeriodicGrid, Sp2Config};
use crate::rng::StreamKey;
use crate::sampler::{sample, DensityDescriptor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sp2Settings {
    /// Points per axis of the periodic box `[-pi, pi)^m`.
    pub points: usize,
    pub dt: f64,
}

#[derive(Debug, Clone)]
pub struct ComparisonCase {
    pub label: String,
    pub initial: InitialData,
    pub potential: Potential,
    pub samples: usize,
    pub times: Vec<f64>,
    /// RK4 step of the trajectories.
    pub dt: f64,
    pub sp2: Sp2Settings,
    /// Also compare current densities.
    pub with_current: bool,
}

impl ComparisonCase {
    /// 2D packet `a = (2, 2)`, `q~ = (1, 1)`, `p~ = (-1, -1)`, `eps = 1/96`, `M = 2000`.
    pub fn barrier(label: &str, potential: Potential, times: Vec<f64>) -> Result<Self> {
        let packet = GaussianPacket::new(vec![2.0; 2], vec![1.0; 2], vec![-1.0; 2], 1.0 / 96.0)?;
        Ok(Self {
            label: label.to_string(),
            initial: InitialData::Gaussian(packet),
            potential,
            samples: 2000,
            times,
            dt: 0.01,
            sp2: Sp2Settings { points: 1024, dt: 0.002 },
            with_current: false,
        })
    }

    /// Focusing WKB data under `E = 10`, `eps = 0.0016`, `M = 1600`, `t = 0.54`.
    pub fn caustic() -> Result<Self> {
        let eps = 0.0016;
        Ok(Self {
            label: "E5".into(),
            initial: InitialData::Wkb(caustic_wkb_1d(eps)?),
            potential: Potential::constant(1, 10.0),
            samples: 1600,
            times: vec![0.54],
            dt: 0.01,
            sp2: Sp2Settings { points: 8192, dt: 1e-4 },
            with_current: true,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ComparisonSnapshot {
    pub t: f64,
    pub fgs: WaveField,
    pub sp2: WaveField,
    pub report: ErrorReport,
}

/// Relative L2 deviation of `rho_FGS` (and `J_FGS`) from the split-step
/// solution at each requested time. `value` is the density error,
/// `secondary` the current error when requested.
pub fn compare_with_sp2(case: &ComparisonCase, seed: u64) -> Result<Vec<ComparisonSnapshot>> {
    let m = case.initial.dim();
    let eps = case.initial.epsilon();
    if case.times.is_empty() || case.times.windows(2).any(|w| !(w[1] > w[0])) || !(case.times[0] > 0.0) {
        return Err(FgsError::InvalidParameter("comparison times must be positive and increasing".into()));
    }
    let pgrid = PeriodicGrid::centered(m, case.sp2.points)?;
    let spec = pgrid.grid_spec();
    let cfg = Sp2Config::new(pgrid.clone(), case.sp2.dt, eps, case.potential.clone())?;
    let initial = case.initial.clone();
    let mut u = WaveField::from_fn(spec.clone(), |x| initial.eval_initial(x).expect("dimension checked"));

    let start = Instant::now();
    let ens = sample(&DensityDescriptor::for_initial(&case.initial), case.samples, &StreamKey::new(seed))?;
    let a0 = ens.initial_amplitudes()?;
    let mut trajs = propagate_ensemble(&ens, &a0, &case.potential, case.times[0], case.dt)?;
    let mut t_prev = 0.0;
    let mut out = Vec::new();
    for &t in &case.times {
        if t > trajs[0].t {
            trajs = continue_ensemble(&trajs, &case.potential, t, case.dt)?;
        }
        u = sp2_solve(&u, &cfg, t - t_prev)?;
        t_prev = t;
        let (fgs, current_err) = if case.with_current {
            let (j_fgs, field) = current_density_field(&trajs, &ens.density_values, &spec, eps)?;
            let grads = spectral_gradient(&pgrid, &u, eps)?;
            let j_ref = current_from_gradient(&u, &grads, eps);
            (field.field, Some(j_fgs.relative_l2(&j_ref)?))
        } else {
            (reconstruct(&trajs, &ens.density_values, &spec, eps)?.field, None)
        };
        let rho_err = density_field(&fgs).relative_l2(&density_field(&u))?;
        let report = ErrorReport {
            metric: Metric::FieldL2VsReference,
            label: format!("{} t={t}", case.label),
            value: rho_err,
            secondary: current_err,
            samples: case.samples,
            epsilon: eps,
            dim: m,
            repetitions: 1,
            elapsed_seconds: start.elapsed().as_secs_f64(),
        };
        out.push(ComparisonSnapshot { t, fgs, sp2: u.clone(), report });
    }
    Ok(out)
}
