//! Declarative experiment configs, drivers for the five benchmark examples,
//! stage-wise debugging commands and atomic run bundles.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::comparison::{compare_with_sp2, ComparisonCase, Sp2Settings};
use crate::error::{FgsError, Result};
use crate::field_io::write_field;
use crate::grid::GridSpec;
use crate::initial::{caustic_wkb_1d, GaussianPacket, InitialData};
use crate::metrics::{
    convergence_study, observable_error, reference_field, ErrorReport, ObservableSetup, Setup, REFERENCE_SAMPLES,
    REFERENCE_STREAM,
};
use crate::observables::{observables_with, ObservableOptions, PairSum};
use crate::potential::Potential;
use crate::propagator::propagate_ensemble;
use crate::reconstruction::{default_grid, reconstruct};
use crate::rng::StreamKey;
use crate::sampler::{sample, DensityDescriptor, SampledEnsemble};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    /// 1D Gaussian data, sampling error tables.
    Example1,
    /// 2D Gaussian data through a central bump, densities against split-step.
    Example2,
    /// Focusing WKB data, density and current against split-step.
    Example3,
    /// WKB data without caustics, sampling error tables.
    Example4,
    /// High-dimensional harmonic packet, mesh-free observables.
    Example5,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Example1 => "example1",
            ExperimentKind::Example2 => "example2",
            ExperimentKind::Example3 => "example3",
            ExperimentKind::Example4 => "example4",
            ExperimentKind::Example5 => "example5",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    pub potentials: Option<Vec<String>>,
    /// Parameter of parametrized potential keys (`constant`, `gaussian_bump`).
    pub parameter: Option<f64>,
    pub epsilons: Option<Vec<f64>>,
}

/// Gaussian packet overrides (examples 1 and 2).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub a: Option<Vec<f64>>,
    pub q: Option<Vec<f64>>,
    pub p: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub samples: Option<Vec<usize>>,
    pub repetitions: Option<usize>,
    pub reference_samples: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_final: Option<f64>,
    pub times: Option<Vec<f64>>,
    pub dt: Option<f64>,
}

/// Reconstruction grid on `[lower, upper]^m`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub spacing: Option<f64>,
}

/// Split-step reference (examples 2 and 3).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    pub points: Option<usize>,
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservablesSection {
    /// `[m, M]` pairs.
    pub cells: Option<Vec<(usize, usize)>>,
    pub pair_sum: Option<PairSum>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "yes")]
    pub fields: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { fields: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub physics: PhysicsSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub reference: ReferenceSection,
    #[serde(default)]
    pub observables: ObservablesSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| FgsError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = fs::read_to_string(path)
            .map_err(|e| FgsError::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::parse(&text)?, text))
    }

    pub fn kind(&self) -> ExperimentKind {
        self.experiment
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(FgsError::Config(format!("field `{field}`: {why}")));
        if let Some(e) = &self.physics.epsilons {
            if e.is_empty() || e.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
                return bad("physics.epsilons", "values must lie in (0, 1]");
            }
        }
        if let Some(p) = &self.physics.potentials {
            if p.is_empty() {
                return bad("physics.potentials", "must not be empty");
            }
            for key in p {
                Potential::from_key(key, 1, self.physics.parameter)
                    .map_err(|e| FgsError::Config(format!("field `physics.potentials`: {e}")))?;
            }
        }
        if let Some(s) = &self.sampling.samples {
            if s.is_empty() || s.contains(&0) {
                return bad("sampling.samples", "sample sizes must be >= 1");
            }
        }
        if self.sampling.repetitions == Some(0) {
            return bad("sampling.repetitions", "must be >= 1");
        }
        if self.sampling.reference_samples == Some(0) {
            return bad("sampling.reference_samples", "must be >= 1");
        }
        if let Some(dt) = self.time.dt {
            if !(dt > 0.0) {
                return bad("time.dt", "must be positive");
            }
        }
        if let Some(t) = self.time.t_final {
            if !(t >= 0.0) {
                return bad("time.t_final", "must be non-negative");
            }
        }
        if let Some(ts) = &self.time.times {
            if ts.is_empty() || ts.windows(2).any(|w| !(w[1] > w[0])) || !(ts[0] > 0.0) {
                return bad("time.times", "must be positive and strictly increasing");
            }
        }
        if let (Some(lo), Some(hi)) = (self.grid.lower, self.grid.upper) {
            if !(hi > lo) {
                return bad("grid.upper", "must exceed grid.lower");
            }
        }
        if let Some(h) = self.grid.spacing {
            if !(h > 0.0) {
                return bad("grid.spacing", "must be positive");
            }
        }
        if let Some(n) = self.reference.points {
            if !n.is_power_of_two() {
                return bad("reference.points", "must be a power of two");
            }
        }
        if let Some(cells) = &self.observables.cells {
            if cells.is_empty() || cells.iter().any(|&(m, n)| m == 0 || n == 0) {
                return bad("observables.cells", "entries are [m >= 1, M >= 1]");
            }
        }
        let g = &self.initial;
        if g.a.is_some() || g.q.is_some() || g.p.is_some() {
            if !matches!(self.kind(), ExperimentKind::Example1 | ExperimentKind::Example2) {
                return bad("initial", "packet overrides apply to example1 and example2 only");
            }
            let dim = if self.kind() == ExperimentKind::Example1 { 1 } else { 2 };
            for (name, v) in [("a", &g.a), ("q", &g.q), ("p", &g.p)] {
                if v.as_ref().is_some_and(|v| v.len() != dim) {
                    return bad(&format!("initial.{name}"), &format!("expected {dim} entries"));
                }
            }
        }
        Ok(())
    }

    fn epsilons(&self, default: &[f64]) -> Vec<f64> {
        self.physics.epsilons.clone().unwrap_or_else(|| default.to_vec())
    }

    fn potentials(&self, default: &[&str]) -> Vec<String> {
        self.physics
            .potentials
            .clone()
            .unwrap_or_else(|| default.iter().map(|s| s.to_string()).collect())
    }

    fn samples(&self, default: &[usize]) -> Vec<usize> {
        self.sampling.samples.clone().unwrap_or_else(|| default.to_vec())
    }

    fn packet(&self, dim: usize, eps: f64, a: f64, q: f64, p: f64) -> Result<GaussianPacket> {
        GaussianPacket::new(
            self.initial.a.clone().unwrap_or_else(|| vec![a; dim]),
            self.initial.q.clone().unwrap_or_else(|| vec![q; dim]),
            self.initial.p.clone().unwrap_or_else(|| vec![p; dim]),
            eps,
        )
    }

    fn grid(&self, dim: usize, eps: f64) -> Result<GridSpec> {
        let lo = self.grid.lower.unwrap_or(-std::f64::consts::PI);
        let hi = self.grid.upper.unwrap_or(std::f64::consts::PI);
        match self.grid.spacing {
            Some(h) => GridSpec::with_max_spacing(dim, lo, hi, h),
            None => default_grid(dim, lo, hi, eps),
        }
    }

    /// Sampling-error setup of examples 1 and 4 for one `(potential, eps)` cell.
    pub fn sampling_setup(&self, potential: &str, eps: f64) -> Result<Setup> {
        let pot = Potential::from_key(potential, 1, self.physics.parameter)?;
        let mut setup = match self.kind() {
            ExperimentKind::Example1 => {
                let mut s = Setup::gaussian_1d(potential, pot, eps)?;
                s.initial = InitialData::Gaussian(self.packet(1, eps, 2.0, 0.5, -0.5)?);
                s
            }
            ExperimentKind::Example4 => Setup::wkb_1d(potential, pot, eps)?,
            other => {
                return Err(FgsError::Config(format!("{} has no sampling-error setup", other.name())));
            }
        };
        setup.t_final = self.time.t_final.unwrap_or(setup.t_final);
        setup.dt = self.time.dt.unwrap_or(setup.dt);
        setup.grid = self.grid(1, eps)?;
        Ok(setup)
    }

    /// Split-step comparison cases of examples 2 and 3.
    pub fn comparison_cases(&self) -> Result<Vec<ComparisonCase>> {
        let mut cases = match self.kind() {
            ExperimentKind::Example2 => {
                let eps = self.epsilons(&[1.0 / 96.0])[0];
                let mut out = Vec::new();
                for key in self.potentials(&["E3", "E4"]) {
                    let default_times = match key.as_str() {
                        "E4" => vec![0.35, 0.7, 1.05, 1.4],
                        _ => vec![0.5, 1.0, 1.5, 2.0],
                    };
                    let pot = Potential::from_key(&key, 2, self.physics.parameter)?;
                    let mut case = ComparisonCase::barrier(&key, pot, default_times)?;
                    case.initial = InitialData::Gaussian(self.packet(2, eps, 2.0, 1.0, -1.0)?);
                    out.push(case);
                }
                out
            }
            ExperimentKind::Example3 => {
                let mut case = ComparisonCase::caustic()?;
                let eps = self.epsilons(&[case.initial.epsilon()])[0];
                case.initial = InitialData::Wkb(caustic_wkb_1d(eps)?);
                if let Some(p) = self.physics.potentials.as_ref().map(|p| p[0].clone()) {
                    case.label = p.clone();
                    case.potential = Potential::from_key(&p, 1, self.physics.parameter)?;
                }
                vec![case]
            }
            other => return Err(FgsError::Config(format!("{} has no split-step comparison", other.name()))),
        };
        for case in &mut cases {
            if let Some(t) = &self.time.times {
                case.times = t.clone();
            } else if let Some(t) = self.time.t_final {
                case.times = vec![t];
            }
            case.dt = self.time.dt.unwrap_or(case.dt);
            if let Some(m) = self.sampling.samples.as_ref() {
                case.samples = m[0];
            }
            case.sp2 = Sp2Settings {
                points: self.reference.points.unwrap_or(case.sp2.points),
                dt: self.reference.dt.unwrap_or(case.sp2.dt),
            };
        }
        Ok(cases)
    }

    pub fn observable_cells(&self) -> Vec<(usize, usize)> {
        self.observables.cells.clone().unwrap_or_else(|| vec![(3, 200), (4, 800), (5, 3200), (6, 12800)])
    }

    pub fn observable_setup(&self, dim: usize) -> ObservableSetup {
        let mut s = ObservableSetup::new(dim);
        s.epsilon = self.epsilons(&[s.epsilon])[0];
        s.t_final = self.time.t_final.unwrap_or(s.t_final);
        s.dt = self.time.dt.unwrap_or(s.dt);
        s.mode = self.observables.pair_sum.unwrap_or(s.mode);
        s
    }
}

/// In-memory bundle: relative path and contents.
#[derive(Debug, Clone, Default)]
pub struct Bundle {
    pub files: Vec<(String, Vec<u8>)>,
}

impl Bundle {
    pub fn add(&mut self, name: impl Into<String>, data: Vec<u8>) {
        self.files.push((name.into(), data));
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, d)| d.as_slice())
    }

    /// Write into a sibling temp directory, then rename over `out`.
    pub fn write_atomic(&self, out: &Path) -> Result<()> {
        let parent = match out.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent)?;
        let name = out
            .file_name()
            .ok_or_else(|| FgsError::Config(format!("invalid output path {}", out.display())))?
            .to_string_lossy()
            .to_string();
        let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        let written = (|| -> Result<()> {
            for (rel, data) in &self.files {
                let path = tmp.join(rel);
                if let Some(dir) = path.parent() {
                    fs::create_dir_all(dir)?;
                }
                fs::write(path, data)?;
            }
            Ok(())
        })();
        if let Err(e) = written {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
        if out.exists() {
            let old = parent.join(format!(".{name}.old-{}", std::process::id()));
            fs::rename(out, &old)?;
            fs::rename(&tmp, out)?;
            fs::remove_dir_all(&old)?;
        } else {
            fs::rename(&tmp, out)?;
        }
        Ok(())
    }
}

/// Simple CSV table; numbers use the shortest round-trip representation.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| FgsError::Io(e.into_error()))
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn field_bytes(field: &crate::grid::WaveField) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_field(&mut buf, field)?;
    Ok(buf)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub bundle: Bundle,
    pub reports: Vec<ErrorReport>,
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| FgsError::Config(format!("thread pool: {e}")))?
            .install(f),
        None => f(),
    }
}

/// Execute a parsed config; nothing touches the disk.
pub fn execute(cfg: &ExperimentConfig, config_text: &str, opts: &RunOptions) -> Result<RunOutput> {
    let seed = opts.seed.unwrap_or(cfg.seed);
    let start = Instant::now();
    let (mut bundle, reports) = with_threads(opts.threads, || match cfg.kind() {
        ExperimentKind::Example1 | ExperimentKind::Example4 => run_sampling_tables(cfg, seed),
        ExperimentKind::Example2 | ExperimentKind::Example3 => run_comparisons(cfg, seed),
        ExperimentKind::Example5 => run_observables(cfg, seed),
    })?;
    let mut timing = Table::new(&["metric", "label", "epsilon", "M", "dim", "seconds"]);
    for r in &reports {
        timing.push(vec![
            r.metric.name().into(),
            r.label.clone(),
            num(r.epsilon),
            r.samples.to_string(),
            r.dim.to_string(),
            num(r.elapsed_seconds),
        ]);
    }
    bundle.add("timing.csv", timing.to_csv()?);
    bundle.add("config.copy", config_text.as_bytes().to_vec());
    let manifest = serde_json::json!({
        "experiment": cfg.kind().name(),
        "seed": seed,
        "package": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "threads": opts.threads.unwrap_or_else(rayon::current_num_threads),
        "elapsed_seconds": start.elapsed().as_secs_f64(),
        "files": bundle.files.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
    });
    bundle.add("manifest.json", serde_json::to_vec_pretty(&manifest)?);
    Ok(RunOutput { bundle, reports })
}

fn run_sampling_tables(cfg: &ExperimentConfig, seed: u64) -> Result<(Bundle, Vec<ErrorReport>)> {
    let potentials = match cfg.kind() {
        ExperimentKind::Example1 => cfg.potentials(&["E1", "E2"]),
        _ => cfg.potentials(&["E6", "E7"]),
    };
    let epsilons = cfg.epsilons(&[0.0256, 0.0064, 0.0016, 0.0004]);
    let samples = cfg.samples(&[50, 100, 200, 400, 800, 1600]);
    let reps = cfg.sampling.repetitions.unwrap_or(30);
    let m0 = cfg.sampling.reference_samples.unwrap_or(REFERENCE_SAMPLES);
    let mut bundle = Bundle::default();
    let mut table = Table::new(&["metric", "label", "epsilon", "M", "dim", "repetitions", "value", "rms"]);
    let mut slopes = Table::new(&["label", "epsilon", "slope"]);
    let mut reports = Vec::new();
    for pot in &potentials {
        let study = convergence_study(|eps| cfg.sampling_setup(pot, eps), &samples, &epsilons, reps, m0, seed)?;
        for r in &study.reports {
            table.push(vec![
                r.metric.name().into(),
                r.label.clone(),
                num(r.epsilon),
                r.samples.to_string(),
                r.dim.to_string(),
                r.repetitions.to_string(),
                num(r.value),
                opt(r.secondary),
            ]);
        }
        for (eps, s) in &study.slopes {
            slopes.push(vec![pot.clone(), num(*eps), num(*s)]);
        }
        if cfg.output.fields {
            for &eps in &epsilons {
                let setup = cfg.sampling_setup(pot, eps)?;
                let reference = reference_field(&setup, m0, &StreamKey::new(seed).child(REFERENCE_STREAM))?;
                bundle.add(format!("fields/reference_{pot}_eps{eps}.fgsf"), field_bytes(&reference)?);
            }
        }
        reports.extend(study.reports);
    }
    bundle.add("sampling_error_ES.csv", table.to_csv()?);
    bundle.add("slopes.csv", slopes.to_csv()?);
    Ok((bundle, reports))
}

fn run_comparisons(cfg: &ExperimentConfig, seed: u64) -> Result<(Bundle, Vec<ErrorReport>)> {
    let mut bundle = Bundle::default();
    let mut table =
        Table::new(&["metric", "label", "t", "epsilon", "M", "dim", "density_rel_l2", "current_rel_l2"]);
    let mut reports = Vec::new();
    for case in cfg.comparison_cases()? {
        for snap in compare_with_sp2(&case, seed)? {
            let r = &snap.report;
            table.push(vec![
                r.metric.name().into(),
                case.label.clone(),
                num(snap.t),
                num(r.epsilon),
                r.samples.to_string(),
                r.dim.to_string(),
                num(r.value),
                opt(r.secondary),
            ]);
            if cfg.output.fields {
                let stem = format!("fields/{}_t{}", case.label, snap.t);
                bundle.add(format!("{stem}_fgs.fgsf"), field_bytes(&snap.fgs)?);
                bundle.add(format!("{stem}_sp2.fgsf"), field_bytes(&snap.sp2)?);
            }
            reports.push(snap.report);
        }
    }
    bundle.add("field_l2_vs_reference.csv", table.to_csv()?);
    Ok((bundle, reports))
}

fn run_observables(cfg: &ExperimentConfig, seed: u64) -> Result<(Bundle, Vec<ErrorReport>)> {
    let reps = cfg.sampling.repetitions.unwrap_or(60);
    let header = ["metric", "label", "epsilon", "M", "dim", "repetitions", "value", "normalized_value"];
    let mut tq = Table::new(&header);
    let mut tp = Table::new(&header);
    let mut reports = Vec::new();
    for (m, samples) in cfg.observable_cells() {
        let (q, p) = observable_error(&cfg.observable_setup(m), samples, reps, seed)?;
        for (t, r) in [(&mut tq, &q), (&mut tp, &p)] {
            t.push(vec![
                r.metric.name().into(),
                r.label.clone(),
                num(r.epsilon),
                r.samples.to_string(),
                r.dim.to_string(),
                r.repetitions.to_string(),
                num(r.value),
                opt(r.secondary),
            ]);
        }
        reports.push(q);
        reports.push(p);
    }
    let mut bundle = Bundle::default();
    bundle.add("observable_mse_q.csv", tq.to_csv()?);
    bundle.add("observable_mse_p.csv", tp.to_csv()?);
    Ok((bundle, reports))
}

/// Parse `config_path`, execute and write the bundle to `out`. A config
/// error leaves no output behind.
pub fn run_experiment(config_path: &Path, out: &Path, opts: &RunOptions) -> Result<RunOutput> {
    let (cfg, text) = ExperimentConfig::load(config_path)?;
    let output = execute(&cfg, &text, opts)?;
    output.bundle.write_atomic(out)?;
    Ok(output)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Sample,
    Propagate,
    Reconstruct,
    Observe,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Sample => "sample",
            Stage::Propagate => "propagate",
            Stage::Reconstruct => "reconstruct",
            Stage::Observe => "observe",
        }
    }
}

/// First cell of a config as `(initial data, potential, M, t_final, dt)`.
fn stage_cell(cfg: &ExperimentConfig) -> Result<(InitialData, Potential, usize, f64, f64)> {
    let dt = cfg.time.dt.unwrap_or(0.01);
    match cfg.kind() {
        ExperimentKind::Example1 | ExperimentKind::Example4 => {
            let pot = cfg.potentials(if cfg.kind() == ExperimentKind::Example1 { &["E1"] } else { &["E6"] })[0].clone();
            let eps = cfg.epsilons(&[0.0256])[0];
            let setup = cfg.sampling_setup(&pot, eps)?;
            Ok((setup.initial, setup.potential, cfg.samples(&[400])[0], setup.t_final, setup.dt))
        }
        ExperimentKind::Example2 | ExperimentKind::Example3 => {
            let case = cfg.comparison_cases()?.remove(0);
            let t = *case.times.last().expect("validated");
            Ok((case.initial, case.potential, case.samples, t, case.dt))
        }
        ExperimentKind::Example5 => {
            let (m, samples) = cfg.observable_cells()[0];
            let s = cfg.observable_setup(m);
            Ok((InitialData::Gaussian(s.packet()?), Potential::harmonic(m), samples, s.t_final, dt))
        }
    }
}

fn ensemble_table(ens: &SampledEnsemble) -> Table {
    let m = ens.descriptor.dim();
    let mut header = vec!["j".to_string()];
    header.extend((1..=m).map(|a| format!("q{a}")));
    header.extend((1..=m).map(|a| format!("p{a}")));
    header.push("pi".into());
    let mut t = Table { header, rows: Vec::new() };
    for (j, (z, pi)) in ens.points.iter().zip(&ens.density_values).enumerate() {
        let mut row = vec![j.to_string()];
        row.extend(z.q.iter().chain(&z.p).map(|v| num(*v)));
        row.push(num(*pi));
        t.push(row);
    }
    t
}

/// Run the pipeline up to `stage` for the first cell of the config.
pub fn execute_stage(cfg: &ExperimentConfig, config_text: &str, stage: Stage, opts: &RunOptions) -> Result<Bundle> {
    let seed = opts.seed.unwrap_or(cfg.seed);
    let mut bundle = with_threads(opts.threads, || {
        let (initial, pot, samples, t_final, dt) = stage_cell(cfg)?;
        let eps = initial.epsilon();
        let m = initial.dim();
        let ens = sample(&DensityDescriptor::for_initial(&initial), samples, &StreamKey::new(seed))?;
        let mut bundle = Bundle::default();
        if stage == Stage::Sample {
            bundle.add("samples.csv", ensemble_table(&ens).to_csv()?);
            return Ok(bundle);
        }
        let a0 = ens.initial_amplitudes()?;
        let trajs = propagate_ensemble(&ens, &a0, &pot, t_final, dt)?;
        match stage {
            Stage::Sample => unreachable!(),
            Stage::Propagate => {
                let mut header = vec!["j".to_string(), "t".into()];
                header.extend((1..=m).map(|a| format!("Q{a}")));
                header.extend((1..=m).map(|a| format!("P{a}")));
                header.extend(["S", "A_re", "A_im", "pi", "max_z_condition"].map(String::from));
                let mut t = Table { header, rows: Vec::new() };
                for (j, (s, pi)) in trajs.iter().zip(&ens.density_values).enumerate() {
                    let mut row = vec![j.to_string(), num(s.t)];
                    row.extend(s.q.iter().chain(&s.p).map(|v| num(*v)));
                    row.extend([num(s.s), num(s.a.re), num(s.a.im), num(*pi), num(s.max_z_condition)]);
                    t.push(row);
                }
                bundle.add("trajectories.csv", t.to_csv()?);
            }
            Stage::Reconstruct => {
                let grid = cfg.grid(m, eps)?;
                let f = reconstruct(&trajs, &ens.density_values, &grid, eps)?;
                bundle.add("field.fgsf", field_bytes(&f.field)?);
            }
            Stage::Observe => {
                let opts = ObservableOptions { screen: true, mode: cfg.observables.pair_sum.unwrap_or_default() };
                let obs = observables_with(&trajs, &ens.density_values, eps, opts)?;
                let mut t = Table::new(&[
                    "component",
                    "position_raw_re",
                    "position_raw_im",
                    "position_normalized",
                    "momentum_raw_re",
                    "momentum_raw_im",
                    "momentum_normalized",
                    "norm_sq",
                ]);
                for a in 0..m {
                    t.push(vec![
                        (a + 1).to_string(),
                        num(obs.position.raw[a].re),
                        num(obs.position.raw[a].im),
                        num(obs.position.normalized[a]),
                        num(obs.momentum.raw[a].re),
                        num(obs.momentum.raw[a].im),
                        num(obs.momentum.normalized[a]),
                        num(obs.position.norm_sq),
                    ]);
                }
                bundle.add("observables.csv", t.to_csv()?);
            }
        }
        Ok(bundle)
    })?;
    bundle.add("config.copy", config_text.as_bytes().to_vec());
    let manifest = serde_json::json!({
        "stage": stage.name(),
        "experiment": cfg.kind().name(),
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
    });
    bundle.add("manifest.json", serde_json::to_vec_pretty(&manifest)?);
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
experiment = "example1"
seed = 4

[physics]
potentials = ["E2"]
epsilons = [0.0256]

[sampling]
samples = [20, 80]
repetitions = 3
reference_samples = 2000

[output]
fields = false
"#;

    #[test]
    fn parses_and_defaults() {
        let cfg = ExperimentConfig::parse(SMALL).unwrap();
        assert_eq!(cfg.kind(), ExperimentKind::Example1);
        let s = cfg.sampling_setup("E2", 0.0256).unwrap();
        assert_eq!(s.t_final, 0.5);
        assert_eq!(s.dt, 0.01);
        assert!(s.grid.axis_spacing(0) <= 2.0 * std::f64::consts::PI * 0.0256 / 16.0 + 1e-15);
        let e5 = ExperimentConfig::parse("experiment = \"example5\"\n").unwrap();
        assert_eq!(e5.observable_cells()[3], (6, 12800));
        assert_eq!(e5.observable_setup(4).mode, PairSum::HermitianHalf);
        let bump = "experiment = \"example1\"\n[physics]\npotentials = [\"gaussian_bump\"]\nparameter = 3.0\n";
        let cfg = ExperimentConfig::parse(bump).unwrap();
        let pot = cfg.sampling_setup("gaussian_bump", 0.0256).unwrap().potential;
        assert!((pot.eval(&[0.0]).unwrap() - 3.0).abs() < 1e-12);
        assert!(ExperimentConfig::parse("experiment = \"example1\"\n[physics]\npotentials = [\"constant\"]\n").is_err());
    }

    #[test]
    fn config_errors_name_the_field() {
        let unknown = ExperimentConfig::parse("experiment = \"example1\"\nbogus = 1\n").unwrap_err();
        assert!(unknown.to_string().contains("bogus"), "{unknown}");
        assert!(unknown.to_string().contains("line"), "{unknown}");
        let bad = ExperimentConfig::parse("experiment = \"example1\"\n[sampling]\nsamples = [0]\n").unwrap_err();
        assert!(bad.to_string().contains("sampling.samples"), "{bad}");
        let pot = ExperimentConfig::parse("experiment = \"example1\"\n[physics]\npotentials = [\"E9\"]\n")
            .unwrap_err();
        assert!(pot.to_string().contains("E9"), "{pot}");
        assert!(ExperimentConfig::parse("experiment = \"example9\"\n").is_err());
    }

    #[test]
    fn csv_is_thread_independent() {
        let cfg = ExperimentConfig::parse(SMALL).unwrap();
        let run = |threads| {
            execute(&cfg, SMALL, &RunOptions { seed: None, threads: Some(threads) }).unwrap().bundle
        };
        let (a, b) = (run(1), run(3));
        for name in ["sampling_error_ES.csv", "slopes.csv"] {
            assert_eq!(a.get(name).unwrap(), b.get(name).unwrap(), "{name}");
        }
        let text = String::from_utf8(a.get("sampling_error_ES.csv").unwrap().to_vec()).unwrap();
        assert!(text.starts_with("metric,label,epsilon,M,dim,repetitions,value,rms\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn bundle_is_atomic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("bad.toml");
        fs::write(&cfg_path, "experiment = 3\n").unwrap();
        let out = dir.path().join("run");
        assert!(run_experiment(&cfg_path, &out, &RunOptions::default()).is_err());
        assert!(!out.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);

        let good = dir.path().join("good.toml");
        fs::write(&good, SMALL).unwrap();
        run_experiment(&good, &out, &RunOptions::default()).unwrap();
        for f in ["config.copy", "manifest.json", "sampling_error_ES.csv", "timing.csv", "slopes.csv"] {
            assert!(out.join(f).exists(), "{f}");
        }
        assert_eq!(fs::read_to_string(out.join("config.copy")).unwrap(), SMALL);
        // rerun replaces the bundle in place
        run_experiment(&good, &out, &RunOptions { seed: Some(5), threads: None }).unwrap();
        let manifest: serde_json::Value =
            serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["seed"], 5);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 3);
    }

    #[test]
    fn stages_produce_their_artifacts() {
        let cfg = ExperimentConfig::parse(SMALL).unwrap();
        let opts = RunOptions::default();
        let s = execute_stage(&cfg, SMALL, Stage::Sample, &opts).unwrap();
        let text = String::from_utf8(s.get("samples.csv").unwrap().to_vec()).unwrap();
        assert!(text.starts_with("j,q1,p1,pi\n"));
        assert_eq!(text.lines().count(), 21);
        let p = execute_stage(&cfg, SMALL, Stage::Propagate, &opts).unwrap();
        assert!(p.get("trajectories.csv").is_some());
        let r = execute_stage(&cfg, SMALL, Stage::Reconstruct, &opts).unwrap();
        let field = crate::field_io::read_field(r.get("field.fgsf").unwrap()).unwrap();
        assert_eq!(field.grid().dim(), 1);
        let o = execute_stage(&cfg, SMALL, Stage::Observe, &opts).unwrap();
        assert!(o.get("observables.csv").is_some());
    }
}
