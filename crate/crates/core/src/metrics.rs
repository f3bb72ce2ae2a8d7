//! Sampling and observable error estimators.

use std::f64::consts::PI;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FgsError, Result};
use crate::grid::{GridSpec, WaveField};
use crate::initial::{quadratic_wkb_1d, GaussianPacket, InitialData};
use crate::observables::{hagedorn_observables, observables_with, ObservableOptions, PairSum};
use crate::potential::Potential;
use crate::propagator::{hagedorn_propagate, propagate_ensemble, HagedornState, TrajectoryState};
use crate::reconstruction::{default_grid, reconstruct, FgsField};
use crate::rng::StreamKey;
use crate::sampler::{sample, sample_range, DensityDescriptor};

/// Ensemble size of the stand-in for the FGA ansatz.
pub const REFERENCE_SAMPLES: usize = 150_000;
/// Substream index reserved for reference ensembles.
pub const REFERENCE_STREAM: u64 = u64::MAX;
/// Trajectories per batch when assembling a reference field.
const REFERENCE_CHUNK: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "sampling_error_ES")]
    SamplingError,
    #[serde(rename = "observable_mse_q")]
    ObservableMseQ,
    #[serde(rename = "observable_mse_p")]
    ObservableMseP,
    #[serde(rename = "field_l2_vs_reference")]
    FieldL2VsReference,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::SamplingError => "sampling_error_ES",
            Metric::ObservableMseQ => "observable_mse_q",
            Metric::ObservableMseP => "observable_mse_p",
            Metric::FieldL2VsReference => "field_l2_vs_reference",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub metric: Metric,
    /// Free-form cell label, e.g. the potential or the observation time.
    pub label: String,
    pub value: f64,
    /// Root-mean-square error for sampling errors; the normalized-form error
    /// for observables; the current-density error for caustic comparisons.
    pub secondary: Option<f64>,
    pub samples: usize,
    pub epsilon: f64,
    pub dim: usize,
    pub repetitions: usize,
    pub elapsed_seconds: f64,
}

/// Initial data, dynamics and reconstruction grid of one experiment cell.
#[derive(Debug, Clone)]
pub struct Setup {
    pub label: String,
    pub initial: InitialData,
    pub potential: Potential,
    pub t_final: f64,
    pub dt: f64,
    pub grid: GridSpec,
}

impl Setup {
    /// 1D packet `a = 2`, `q~ = 1/2`, `p~ = -1/2` to `t = 0.5` on `[-pi, pi]`.
    pub fn gaussian_1d(label: &str, potential: Potential, epsilon: f64) -> Result<Self> {
        let packet = GaussianPacket::new(vec![2.0], vec![0.5], vec![-0.5], epsilon)?;
        Ok(Self {
            label: label.to_string(),
            initial: InitialData::Gaussian(packet),
            potential,
            t_final: 0.5,
            dt: 0.01,
            grid: default_grid(1, -PI, PI, epsilon)?,
        })
    }

    /// WKB data with quadratic phase `-x^2` to `t = 0.5` on `[-pi, pi]`.
    pub fn wkb_1d(label: &str, potential: Potential, epsilon: f64) -> Result<Self> {
        Ok(Self {
            label: label.to_string(),
            initial: InitialData::Wkb(quadratic_wkb_1d(epsilon)?),
            potential,
            t_final: 0.5,
            dt: 0.01,
            grid: default_grid(1, -PI, PI, epsilon)?,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.initial.epsilon()
    }

    pub fn dim(&self) -> usize {
        self.initial.dim()
    }

    pub fn descriptor(&self) -> DensityDescriptor {
        DensityDescriptor::for_initial(&self.initial)
    }
}

/// Sample, then propagate to `setup.t_final`. Returns trajectories and `pi(z_0)`.
pub fn run_ensemble(setup: &Setup, samples: usize, key: &StreamKey) -> Result<(Vec<TrajectoryState>, Vec<f64>)> {
    let ens = sample(&setup.descriptor(), samples, key)?;
    let a0 = ens.initial_amplitudes()?;
    let trajs = propagate_ensemble(&ens, &a0, &setup.potential, setup.t_final, setup.dt)?;
    Ok((trajs, ens.density_values))
}

pub fn fgs_field(setup: &Setup, samples: usize, key: &StreamKey) -> Result<FgsField> {
    let (trajs, pis) = run_ensemble(setup, samples, key)?;
    let mut f = reconstruct(&trajs, &pis, &setup.grid, setup.epsilon())?;
    f.seed = Some(key.seed());
    Ok(f)
}

/// `u_FGS` with `samples` trajectories assembled in batches; equal to
/// [`fgs_field`] up to summation order.
pub fn reference_field(setup: &Setup, samples: usize, key: &StreamKey) -> Result<WaveField> {
    if samples == 0 {
        return Err(FgsError::InvalidParameter("reference needs at least one sample".into()));
    }
    let desc = setup.descriptor();
    let mut acc = vec![Complex64::new(0.0, 0.0); setup.grid.len()];
    let mut start = 0;
    while start < samples {
        let count = REFERENCE_CHUNK.min(samples - start);
        let ens = sample_range(&desc, start, count, key)?;
        let a0 = ens.initial_amplitudes()?;
        let trajs = propagate_ensemble(&ens, &a0, &setup.potential, setup.t_final, setup.dt)?;
        let part = reconstruct(&trajs, &ens.density_values, &setup.grid, setup.epsilon())?;
        let w = count as f64 / samples as f64;
        for (a, v) in acc.iter_mut().zip(part.field.values()) {
            *a += v * w;
        }
        start += count;
    }
    WaveField::new(setup.grid.clone(), acc)
}

/// `E_S`: mean over repetitions of `||u_FGS - u_ref||`, with an `M0`-sample
/// reference drawn from a disjoint substream.
pub fn sampling_error(
    setup: &Setup,
    samples: usize,
    reps: usize,
    reference_samples: usize,
    seed: u64,
) -> Result<ErrorReport> {
    let key = StreamKey::new(seed);
    let start = Instant::now();
    let reference = reference_field(setup, reference_samples, &key.child(REFERENCE_STREAM))?;
    let mut report = sampling_error_against(setup, &reference, samples, reps, &key)?;
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// As [`sampling_error`] with a precomputed reference; repetition `r` uses `key.child(r)`.
pub fn sampling_error_against(
    setup: &Setup,
    reference: &WaveField,
    samples: usize,
    reps: usize,
    key: &StreamKey,
) -> Result<ErrorReport> {
    if reps == 0 {
        return Err(FgsError::InvalidParameter("repetitions must be >= 1".into()));
    }
    let start = Instant::now();
    let errors: Vec<f64> = (0..reps as u64)
        .into_par_iter()
        .map(|r| fgs_field(setup, samples, &key.child(r))?.field.l2_distance(reference))
        .collect::<Result<_>>()?;
    let mean = errors.iter().sum::<f64>() / reps as f64;
    let rms = (errors.iter().map(|e| e * e).sum::<f64>() / reps as f64).sqrt();
    Ok(ErrorReport {
        metric: Metric::SamplingError,
        label: setup.label.clone(),
        value: mean,
        secondary: Some(rms),
        samples,
        epsilon: setup.epsilon(),
        dim: setup.dim(),
        repetitions: reps,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Harmonic, high-dimensional packet with `a_j = 1 + frac(0.2 j)`, `q~ = 1/sqrt(m)`, `p~ = -q~`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableSetup {
    pub dim: usize,
    pub epsilon: f64,
    pub t_final: f64,
    pub dt: f64,
    pub mode: PairSum,
}

impl ObservableSetup {
    pub fn new(dim: usize) -> Self {
        Self { dim, epsilon: 0.0256, t_final: 0.5, dt: 0.01, mode: PairSum::HermitianHalf }
    }

    pub fn packet(&self) -> Result<GaussianPacket> {
        let m = self.dim;
        let a = (1..=m).map(|j| 1.0 + (0.2 * j as f64).fract()).collect();
        let q = vec![1.0 / (m as f64).sqrt(); m];
        let p = q.iter().map(|v| -v).collect();
        GaussianPacket::new(a, q, p, self.epsilon)
    }
}

/// `(E^q, E^p)`: mean over repetitions of the per-component mean squared
/// deviation of the raw double sum from the Hagedorn expectations.
/// `secondary` holds the same statistic for the normalized observables.
pub fn observable_error(setup: &ObservableSetup, samples: usize, reps: usize, seed: u64) -> Result<(ErrorReport, ErrorReport)> {
    if reps == 0 {
        return Err(FgsError::InvalidParameter("repetitions must be >= 1".into()));
    }
    let start = Instant::now();
    let packet = setup.packet()?;
    let m = setup.dim;
    let pot = Potential::harmonic(m);
    let exact = {
        let run = hagedorn_propagate(&HagedornState::from_packet(&packet), &pot, setup.t_final, setup.dt)?;
        hagedorn_observables(&run.state)?
    };
    let desc = DensityDescriptor::gaussian(packet.clone());
    let key = StreamKey::new(seed);
    let opts = ObservableOptions { screen: true, mode: setup.mode };
    let per_rep: Vec<[f64; 4]> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let ens = sample(&desc, samples, &key.child(r))?;
            let a0 = ens.initial_amplitudes()?;
            let trajs = propagate_ensemble(&ens, &a0, &pot, setup.t_final, setup.dt)?;
            let obs = observables_with(&trajs, &ens.density_values, setup.epsilon, opts)?;
            let mse = |got: &[f64], want: &[f64]| {
                got.iter().zip(want).map(|(g, w)| (g - w).powi(2)).sum::<f64>() / m as f64
            };
            Ok([
                mse(&obs.position.raw_real(), &exact.position),
                mse(&obs.momentum.raw_real(), &exact.momentum),
                mse(&obs.position.normalized, &exact.position),
                mse(&obs.momentum.normalized, &exact.momentum),
            ])
        })
        .collect::<Result<_>>()?;
    let mean = |i: usize| per_rep.iter().map(|v| v[i]).sum::<f64>() / reps as f64;
    let elapsed = start.elapsed().as_secs_f64();
    let report = |metric, value, secondary| ErrorReport {
        metric,
        label: format!("m={m}"),
        value,
        secondary: Some(secondary),
        samples,
        epsilon: setup.epsilon,
        dim: m,
        repetitions: reps,
        elapsed_seconds: elapsed,
    };
    Ok((
        report(Metric::ObservableMseQ, mean(0), mean(2)),
        report(Metric::ObservableMseP, mean(1), mean(3)),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub reports: Vec<ErrorReport>,
    /// `(epsilon, slope of log E_S against log M)`.
    pub slopes: Vec<(f64, f64)>,
}

impl ConvergenceStudy {
    pub fn value(&self, epsilon: f64, samples: usize) -> Option<f64> {
        self.reports.iter().find(|r| r.epsilon == epsilon && r.samples == samples).map(|r| r.value)
    }
}

/// Cross product of `(M, eps)` cells. Each `eps` shares one reference field
/// across its sample sizes.
pub fn convergence_study(
    make: impl Fn(f64) -> Result<Setup>,
    sample_sizes: &[usize],
    epsilons: &[f64],
    reps: usize,
    reference_samples: usize,
    seed: u64,
) -> Result<ConvergenceStudy> {
    if sample_sizes.is_empty() || epsilons.is_empty() {
        return Err(FgsError::InvalidParameter("convergence study needs nonempty M and eps lists".into()));
    }
    let key = StreamKey::new(seed);
    let mut reports = Vec::new();
    let mut slopes = Vec::new();
    for &eps in epsilons {
        let setup = make(eps)?;
        let start = Instant::now();
        let reference = reference_field(&setup, reference_samples, &key.child(REFERENCE_STREAM))?;
        let ref_time = start.elapsed().as_secs_f64();
        let mut values = Vec::new();
        for &m in sample_sizes {
            let mut r = sampling_error_against(&setup, &reference, m, reps, &key)?;
            r.elapsed_seconds += ref_time;
            values.push(r.value);
            reports.push(r);
        }
        if sample_sizes.len() >= 2 {
            let xs: Vec<f64> = sample_sizes.iter().map(|&m| m as f64).collect();
            slopes.push((eps, loglog_slope(&xs, &values)));
        }
    }
    Ok(ConvergenceStudy { reports, slopes })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

/// `(max - min) / min`.
pub fn relative_spread(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    (max - min) / min
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let xs = [100.0, 400.0, 1600.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        assert!((loglog_slope(&xs, &ys) + 0.5).abs() < 1e-12);
        assert!((relative_spread(&[1.0, 1.2, 1.1]) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn reference_matches_direct_field() {
        let setup = Setup::gaussian_1d("E1", Potential::harmonic(1), 0.0256).unwrap();
        let key = StreamKey::new(3);
        let direct = fgs_field(&setup, 45_000, &key).unwrap();
        let batched = reference_field(&setup, 45_000, &key).unwrap();
        let d = direct.field.l2_distance(&batched).unwrap();
        assert!(d <= 1e-12 * direct.field.l2_norm(), "{d:e}");
    }

    #[test]
    fn identical_ensembles_have_zero_error() {
        let setup = Setup::gaussian_1d("E2", Potential::torsion(1), 0.0256).unwrap();
        let key = StreamKey::new(11);
        let reference = fgs_field(&setup, 300, &key.child(0)).unwrap().field;
        let r = sampling_error_against(&setup, &reference, 300, 1, &key).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.metric, Metric::SamplingError);
    }

    #[test]
    fn error_decreases_with_samples() {
        let setup = Setup::gaussian_1d("E1", Potential::harmonic(1), 0.0256).unwrap();
        let key = StreamKey::new(5);
        let reference = reference_field(&setup, 20_000, &key.child(REFERENCE_STREAM)).unwrap();
        let e: Vec<f64> = [50, 200, 800]
            .iter()
            .map(|&m| sampling_error_against(&setup, &reference, m, 6, &key).unwrap().value)
            .collect();
        assert!(e[0] > e[1] && e[1] > e[2], "{e:?}");
        let r = sampling_error_against(&setup, &reference, 50, 6, &key).unwrap();
        assert!(r.secondary.unwrap() >= r.value);
    }

    #[test]
    fn observable_error_is_deterministic_and_small_for_large_m() {
        let setup = ObservableSetup { dim: 2, ..ObservableSetup::new(2) };
        let (q1, p1) = observable_error(&setup, 400, 4, 9).unwrap();
        let (q2, p2) = observable_error(&setup, 400, 4, 9).unwrap();
        assert_eq!(q1.value, q2.value);
        assert_eq!(p1.value, p2.value);
        assert!(q1.value < 0.05 && p1.value < 0.5, "{} {}", q1.value, p1.value);
        assert!(q1.secondary.unwrap() < q1.value);
    }

    #[test]
    fn packet_parameters() {
        let p = ObservableSetup::new(5).packet().unwrap();
        let expected = [1.2, 1.4, 1.6, 1.8, 1.0];
        for (a, e) in p.a.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12);
        }
        let norm: f64 = p.q_tilde.iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn observable_timing_grows_with_samples() {
        // 16x the samples is 256x the pairs; far above timer noise
        let setup = ObservableSetup::new(3);
        let (small, _) = observable_error(&setup, 100, 2, 1).unwrap();
        let (large, _) = observable_error(&setup, 1600, 2, 1).unwrap();
        assert!(large.elapsed_seconds > small.elapsed_seconds);
    }
}
