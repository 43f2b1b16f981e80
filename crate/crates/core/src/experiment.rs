//! Configuration-driven experiment runner.
//!
//! A config names an experiment preset and overrides any of its fields. The
//! resolved config (every default materialised) is echoed into the output
//! bundle, so re-running from the echo reproduces the bundle.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{invalid, Error, Result};
use crate::master::{
    coupling_sweep, run_coupled_pair, uncoupled_qubit_traces, uncoupled_scaling, ScalingProtocol,
};
use crate::model::{derive_seed, ModelParams};
use crate::operator::C64;
use crate::oracles::{min_displacement_levels, OracleCheck, OracleSuite};
use crate::parallel::{current_threads, is_parallel};
use crate::qsd::{run_ensemble, Ensemble, InputState, QubitInit, RunConfig, Stepper};
use crate::spectral::{psd_named, Spectrum, Window};

/// Seed stream for detector trajectory ensembles.
pub const TRAJECTORY_STREAM: u64 = 0x4e04;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ReadoutResonant,
    ReadoutMismatch,
    ChainScaling,
    CoupledPair,
    OracleSuite,
    Custom,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::ReadoutResonant,
        ExperimentKind::ReadoutMismatch,
        ExperimentKind::ChainScaling,
        ExperimentKind::CoupledPair,
        ExperimentKind::OracleSuite,
        ExperimentKind::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ReadoutResonant => "readout-resonant",
            ExperimentKind::ReadoutMismatch => "readout-mismatch",
            ExperimentKind::ChainScaling => "chain-scaling",
            ExperimentKind::CoupledPair => "coupled-pair",
            ExperimentKind::OracleSuite => "oracle-suite",
            ExperimentKind::Custom => "custom",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidArgument(format!(
                    "unknown experiment `{s}`; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// Trajectory controls of the detector experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorControls {
    /// Mean photon number of the coherent input, one ensemble each.
    pub photons: Vec<f64>,
    pub n_traj: usize,
    /// Total duration in periods of ε, warm-up included.
    pub periods: f64,
    pub warmup_periods: f64,
    pub steps_per_period: usize,
    pub stride: usize,
    pub stepper: Stepper,
    pub qubit_init: QubitInit,
    pub leakage_threshold: f64,
    /// Raise m_a per input until the coherent tail is controlled.
    pub auto_truncation: bool,
}

impl Default for DetectorControls {
    fn default() -> Self {
        Self {
            photons: vec![0.0, 1.0],
            n_traj: 20,
            periods: 500.0,
            warmup_periods: 300.0,
            steps_per_period: 100,
            stride: 5,
            stepper: Stepper::Rk4Drift,
            qubit_init: QubitInit::Superposition,
            leakage_threshold: 1e-4,
            auto_truncation: true,
        }
    }
}

/// Spectral analysis of the detector readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisControls {
    pub window: Window,
    pub segments: usize,
    /// Readout band is ω_b ± readout_halfwidth.
    pub readout_halfwidth: f64,
}

impl Default for AnalysisControls {
    fn default() -> Self {
        Self {
            window: Window::Hann,
            segments: 8,
            readout_halfwidth: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputControls {
    /// Trajectories (or realizations) per input written as raw series.
    pub raw_trajectories: usize,
    /// Also write binary dumps of the raw trajectories.
    pub binary: bool,
}

impl Default for OutputControls {
    fn default() -> Self {
        Self {
            raw_trajectories: 1,
            binary: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub params: ModelParams,
    pub detector: DetectorControls,
    pub analysis: AnalysisControls,
    pub scaling: ScalingProtocol,
    pub oracle: OracleSuite,
    pub output: OutputControls,
}

impl ExperimentConfig {
    pub fn preset(kind: ExperimentKind) -> Self {
        let detector_params = ModelParams {
            m_a: 10,
            m_b: 8,
            ..ModelParams::default()
        };
        let (params, photons) = match kind {
            ExperimentKind::ReadoutResonant => (detector_params, vec![0.0, 1.0, 5.0]),
            ExperimentKind::ReadoutMismatch => {
                let omega_b = 0.1;
                let p = ModelParams {
                    omega_a: 0.099,
                    omega_b,
                    gamma_b: 1e-3 * omega_b,
                    ..detector_params
                };
                (p, vec![0.0, 1.0])
            }
            ExperimentKind::ChainScaling => (ModelParams::chain(9), vec![0.0, 1.0]),
            ExperimentKind::CoupledPair => (ModelParams::chain(2), vec![0.0, 1.0]),
            ExperimentKind::OracleSuite | ExperimentKind::Custom => {
                (ModelParams::default(), vec![0.0, 1.0])
            }
        };
        let mut cfg = Self {
            experiment: kind,
            seed: 1,
            output_dir: PathBuf::from("out").join(kind.name()),
            params,
            detector: DetectorControls {
                photons,
                ..DetectorControls::default()
            },
            analysis: AnalysisControls::default(),
            scaling: ScalingProtocol::default(),
            oracle: OracleSuite::default(),
            output: OutputControls::default(),
        };
        cfg.resolve();
        cfg
    }

    /// Parses a config: the `experiment` key selects the preset and every
    /// other key overrides it.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: Table = text
            .parse()
            .map_err(|e| Error::Config(format!("malformed config: {e}")))?;
        let kind = match user.get("experiment") {
            Some(Value::String(s)) => s.parse()?,
            Some(other) => {
                return Err(Error::Config(format!(
                    "experiment must be a string, got {other}"
                )))
            }
            None => {
                return Err(Error::Config(
                    "config is missing the `experiment` key".into(),
                ))
            }
        };
        let mut merged = Self::preset(kind).to_table()?;
        merge(&mut merged, user);
        Self::from_table(merged)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("encoding config: {e}")))
    }

    fn to_table(&self) -> Result<Table> {
        Table::try_from(self).map_err(|e| Error::Config(format!("encoding config: {e}")))
    }

    fn from_table(table: Table) -> Result<Self> {
        let mut cfg: Self = Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("{e}")))?;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fields derived from others. The scaling study's largest N is the
    /// configured qubit count.
    fn resolve(&mut self) {
        self.scaling.max_qubits = self.params.n_qubits;
    }

    pub fn validate(&self) -> Result<()> {
        match self.experiment {
            ExperimentKind::ReadoutResonant
            | ExperimentKind::ReadoutMismatch
            | ExperimentKind::Custom => {
                if self.detector.photons.is_empty() {
                    return invalid("detector.photons is empty");
                }
                if self.detector.n_traj == 0 {
                    return invalid("detector.n_traj must be positive");
                }
                if self.analysis.segments == 0 || !(self.analysis.readout_halfwidth > 0.0) {
                    return invalid("analysis needs positive segments and readout_halfwidth");
                }
                for &p in &self.detector.photons {
                    self.run_config(p, 0)?.validate()?;
                }
            }
            ExperimentKind::ChainScaling | ExperimentKind::CoupledPair => {
                self.params.validate()?;
                self.scaling.validate()?;
                if self.experiment == ExperimentKind::CoupledPair && self.params.n_qubits != 2 {
                    return invalid("coupled-pair needs params.n_qubits = 2");
                }
            }
            ExperimentKind::OracleSuite => self.oracle.validate()?,
        }
        Ok(())
    }

    /// Trajectory configuration for one input photon number.
    pub fn run_config(&self, photons: f64, seed: u64) -> Result<RunConfig> {
        if !(photons >= 0.0 && photons.is_finite()) {
            return invalid(format!("photon number {photons} must be finite and >= 0"));
        }
        let d = &self.detector;
        let mut params = self.params.clone();
        if d.auto_truncation {
            let need = min_displacement_levels(C64::new(photons.sqrt(), 0.0));
            params.m_a = params.m_a.max(need);
        }
        Ok(RunConfig {
            params,
            input: InputState::Photons { mean: photons },
            qubit_init: d.qubit_init,
            periods: d.periods,
            steps_per_period: d.steps_per_period,
            stride: d.stride,
            seed,
            warmup_periods: d.warmup_periods,
            stepper: d.stepper,
            leakage_threshold: d.leakage_threshold,
        })
    }

    /// Dotted paths of every numeric field, valid as sweep parameters.
    pub fn sweep_parameters(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        collect_numeric(&Value::Table(self.to_table()?), "", &mut out);
        Ok(out)
    }

    /// Copy with one numeric field replaced. Bare names resolve against
    /// `params` first.
    pub fn with_parameter(&self, name: &str, value: f64) -> Result<Self> {
        let valid = self.sweep_parameters()?;
        let path = if valid.iter().any(|p| p == name) {
            name.to_string()
        } else if valid.iter().any(|p| *p == format!("params.{name}")) {
            format!("params.{name}")
        } else {
            return invalid(format!(
                "unknown parameter `{name}`; valid names: {}",
                valid.join(", ")
            ));
        };
        let mut table = self.to_table()?;
        let mut keys: Vec<&str> = path.split('.').collect();
        let leaf = keys.pop().expect("non-empty path");
        let mut node = &mut table;
        for k in keys {
            node = node
                .get_mut(k)
                .and_then(Value::as_table_mut)
                .expect("path listed by sweep_parameters");
        }
        let slot = node.get_mut(leaf).expect("path listed by sweep_parameters");
        *slot = match slot {
            Value::Integer(_) => {
                if value.fract() != 0.0 || value < 0.0 {
                    return invalid(format!("{path} takes non-negative integers, got {value}"));
                }
                Value::Integer(value as i64)
            }
            _ => Value::Float(value),
        };
        if path == "params.g_qq" && self.experiment == ExperimentKind::CoupledPair {
            // A coupling sweep point runs that single coupling.
            let scaling = table
                .get_mut("scaling")
                .and_then(Value::as_table_mut)
                .expect("scaling section");
            scaling.insert(
                "coupling_sweep".into(),
                Value::Array(vec![Value::Float(value)]),
            );
        }
        Self::from_table(table)
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn collect_numeric(v: &Value, prefix: &str, out: &mut Vec<String>) {
    match v {
        Value::Table(t) => {
            for (k, child) in t {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                collect_numeric(child, &path, out);
            }
        }
        Value::Integer(_) | Value::Float(_) => out.push(prefix.to_string()),
        _ => {}
    }
}

/// Headline numbers of a bundle, one row of a sweep table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    pub snr: f64,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: ExperimentKind,
    pub master_seed: u64,
    /// Seeds of every trajectory or noise realization, by group.
    pub seeds: Vec<SeedGroup>,
    pub code_version: String,
    pub created_unix: u64,
    pub parallel: bool,
    pub threads: usize,
    pub files: Vec<String>,
    pub headline: Headline,
    pub failures: Vec<String>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedGroup {
    pub label: String,
    pub seeds: Vec<u64>,
}

/// Result of one experiment run.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
    /// Oracle comparisons, when the experiment ran any.
    pub checks: Vec<OracleCheck>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.manifest.passed
    }
}

struct Bundle {
    dir: PathBuf,
    files: Vec<String>,
    seeds: Vec<SeedGroup>,
    failures: Vec<String>,
}

impl Bundle {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| {
            Error::Config(format!(
                "cannot create output directory {}: {e}",
                dir.display()
            ))
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            seeds: Vec::new(),
            failures: Vec::new(),
        })
    }

    fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        self.files.push(rel.to_string());
        Ok(p)
    }

    fn write_text(&mut self, rel: &str, text: &str) -> Result<()> {
        let p = self.path(rel)?;
        fs::write(p, text)?;
        Ok(())
    }

    fn write_csv(&mut self, rel: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
        let p = self.path(rel)?;
        let mut w = csv::Writer::from_path(p).map_err(csv_err)?;
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    fn write_spectra(&mut self, rel: &str, spectra: &[&Spectrum]) -> Result<()> {
        let first = spectra
            .first()
            .ok_or_else(|| Error::InvalidArgument("no spectra to write".into()))?;
        let mut header = vec!["freq".to_string()];
        header.extend(spectra.iter().map(|s| s.observable.clone()));
        let rows: Vec<Vec<String>> = (0..first.freqs.len())
            .map(|k| {
                let mut row = vec![num(first.freqs[k])];
                row.extend(spectra.iter().map(|s| num(s.psd[k])));
                row
            })
            .collect();
        self.write_csv(rel, &header, &rows)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn num(x: f64) -> String {
    format!("{x}")
}

/// Runs one experiment and writes its bundle into `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Outcome> {
    config.validate()?;
    let mut bundle = Bundle::create(&config.output_dir)?;
    bundle.write_text("config.toml", &config.to_toml_string()?)?;
    let mut checks = Vec::new();
    let headline = match config.experiment {
        ExperimentKind::ReadoutResonant
        | ExperimentKind::ReadoutMismatch
        | ExperimentKind::Custom => detector_experiment(config, &mut bundle)?,
        ExperimentKind::ChainScaling => uncoupled_experiment(config, &mut bundle)?,
        ExperimentKind::CoupledPair => coupled_experiment(config, &mut bundle)?,
        ExperimentKind::OracleSuite => {
            checks = config.oracle.run(config.seed)?;
            let rows: Vec<Vec<String>> = checks
                .iter()
                .map(|c| {
                    let bound = match c.bound {
                        crate::oracles::Bound::AtMost => "at-most",
                        crate::oracles::Bound::AtLeast => "at-least",
                    };
                    vec![
                        c.name.clone(),
                        num(c.value),
                        bound.into(),
                        num(c.threshold),
                        c.passed.to_string(),
                    ]
                })
                .collect();
            let header = ["check", "value", "bound", "threshold", "passed"].map(String::from);
            bundle.write_csv("oracles.csv", &header, &rows)?;
            for c in checks.iter().filter(|c| !c.passed) {
                bundle.failures.push(format!("oracle check failed: {c}"));
            }
            bundle.seeds.push(SeedGroup {
                label: "oracle-suite".into(),
                seeds: vec![config.seed],
            });
            Headline {
                snr: f64::NAN,
                amplitude: f64::NAN,
            }
        }
    };
    for f in &bundle.failures {
        log::warn!("{f}");
    }
    bundle.files.push("manifest.json".into());
    let manifest = Manifest {
        experiment: config.experiment,
        master_seed: config.seed,
        seeds: std::mem::take(&mut bundle.seeds),
        code_version: env!("CARGO_PKG_VERSION").into(),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        parallel: is_parallel(),
        threads: current_threads(),
        files: std::mem::take(&mut bundle.files),
        headline,
        passed: bundle.failures.is_empty(),
        failures: std::mem::take(&mut bundle.failures),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("encoding manifest: {e}")))?;
    fs::write(bundle.dir.join("manifest.json"), json)?;
    Ok(Outcome {
        dir: bundle.dir,
        manifest,
        checks,
    })
}

fn photon_label(p: f64) -> String {
    format!("photons_{p}")
}

/// Readout-band summary of one detector ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutSummary {
    pub photons: f64,
    pub m_a: usize,
    pub band_x: f64,
    pub band_p: f64,
    pub total_x: f64,
    pub total_p: f64,
    pub max_leakage: f64,
    pub flagged: usize,
}

impl ReadoutSummary {
    pub fn band_total(&self) -> f64 {
        self.band_x + self.band_p
    }
}

/// Trajectory-averaged spectra of the readout quadratures and S^z.
pub fn ensemble_spectra(ensemble: &Ensemble, analysis: &AnalysisControls) -> Result<Vec<Spectrum>> {
    ["x_b", "p_b", "s_z"]
        .iter()
        .map(|name| {
            let spectra = ensemble
                .records
                .iter()
                .map(|r| {
                    let series = r.analysis_window(name).ok_or_else(|| {
                        Error::InvalidArgument(format!("trajectory has no series `{name}`"))
                    })?;
                    psd_named(
                        name,
                        series,
                        r.sample_dt(),
                        analysis.window,
                        analysis.segments,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Spectrum::average(&spectra)
        })
        .collect()
}

/// Readout-band powers of one photon input.
pub fn readout_summary(
    config: &ExperimentConfig,
    photons: f64,
    ensemble: &Ensemble,
    spectra: &[Spectrum],
) -> ReadoutSummary {
    let wb = config.params.omega_b;
    let hw = config.analysis.readout_halfwidth;
    let threshold = config.detector.leakage_threshold;
    ReadoutSummary {
        photons,
        m_a: config
            .run_config(photons, 0)
            .map_or(config.params.m_a, |c| c.params.m_a),
        band_x: spectra[0].band_power(wb - hw, wb + hw),
        band_p: spectra[1].band_power(wb - hw, wb + hw),
        total_x: spectra[0].total_power(),
        total_p: spectra[1].total_power(),
        max_leakage: ensemble
            .records
            .iter()
            .map(|r| r.max_leakage)
            .fold(0.0, f64::max),
        flagged: ensemble
            .records
            .iter()
            .filter(|r| r.leakage_flagged || r.max_leakage > threshold)
            .count(),
    }
}

fn detector_experiment(config: &ExperimentConfig, bundle: &mut Bundle) -> Result<Headline> {
    let base_seed = derive_seed(config.seed, TRAJECTORY_STREAM, 0);
    let mut summaries: Vec<ReadoutSummary> = Vec::new();
    for &photons in &config.detector.photons {
        let label = photon_label(photons);
        let run = config.run_config(photons, base_seed)?;
        log::info!(
            "{label}: {} trajectories, m_a = {}",
            config.detector.n_traj,
            run.params.m_a
        );
        let ensemble = run_ensemble(&run, config.detector.n_traj)?;
        bundle.seeds.push(SeedGroup {
            label: label.clone(),
            seeds: ensemble.records.iter().map(|r| r.seed).collect(),
        });
        let spectra = ensemble_spectra(&ensemble, &config.analysis)?;
        bundle.write_spectra(
            &format!("spectra/{label}.csv"),
            &spectra.iter().collect::<Vec<_>>(),
        )?;

        let summary = &ensemble.summary;
        let first = &ensemble.records[0];
        let mut header = vec!["time".to_string(), "in_analysis".to_string()];
        for s in &summary.series {
            header.push(format!("{}_mean", s.name));
            header.push(format!("{}_stderr", s.name));
        }
        let rows: Vec<Vec<String>> = summary
            .times
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let mut row = vec![num(t), u8::from(first.in_analysis(k)).to_string()];
                for s in &summary.series {
                    row.push(num(s.mean[k]));
                    row.push(num(s.stderr[k]));
                }
                row
            })
            .collect();
        bundle.write_csv(&format!("series/{label}_mean.csv"), &header, &rows)?;
        for (i, rec) in ensemble
            .records
            .iter()
            .take(config.output.raw_trajectories)
            .enumerate()
        {
            let p = bundle.path(&format!("series/{label}_traj{i}.csv"))?;
            rec.write_csv(fs::File::create(p)?)?;
            if config.output.binary {
                let p = bundle.path(&format!("dumps/{label}_traj{i}.bin"))?;
                rec.write_binary(std::io::BufWriter::new(fs::File::create(p)?))?;
            }
        }
        let s = readout_summary(config, photons, &ensemble, &spectra);
        if s.flagged > 0 {
            bundle.failures.push(format!(
                "{label}: {} of {} trajectories exceeded the leakage threshold {:.1e} (worst {:.2e})",
                s.flagged, config.detector.n_traj, config.detector.leakage_threshold, s.max_leakage
            ));
        }
        summaries.push(s);
    }
    let reference = summaries[0].clone();
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::NAN };
    let header = [
        "photons",
        "m_a",
        "band_x",
        "band_p",
        "band_total",
        "total_x",
        "total_p",
        "ratio_x",
        "ratio_p",
        "ratio_total",
        "max_leakage",
        "flagged",
    ]
    .map(String::from);
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                num(s.photons),
                s.m_a.to_string(),
                num(s.band_x),
                num(s.band_p),
                num(s.band_total()),
                num(s.total_x),
                num(s.total_p),
                num(ratio(s.band_x, reference.band_x)),
                num(ratio(s.band_p, reference.band_p)),
                num(ratio(s.band_total(), reference.band_total())),
                num(s.max_leakage),
                s.flagged.to_string(),
            ]
        })
        .collect();
    bundle.write_csv("summary.csv", &header, &rows)?;
    let last = summaries.last().expect("photons is non-empty");
    Ok(Headline {
        snr: ratio(last.band_total(), reference.band_total()),
        amplitude: (2.0 * last.band_total()).sqrt(),
    })
}

fn realization_seeds(config: &ExperimentConfig, params: &ModelParams) -> SeedGroup {
    SeedGroup {
        label: "realizations".into(),
        seeds: (0..config.scaling.realizations)
            .map(|r| config.scaling.run(params, r, config.seed).seed)
            .collect(),
    }
}

fn uncoupled_experiment(config: &ExperimentConfig, bundle: &mut Bundle) -> Result<Headline> {
    let params = &config.params;
    let study = uncoupled_scaling(params, &config.scaling, config.seed)?;
    bundle.seeds.push(realization_seeds(config, params));
    bundle.write_spectra(
        "spectra/scaling.csv",
        &study.spectra.iter().collect::<Vec<_>>(),
    )?;
    let header = [
        "n_qubits",
        "signal_power",
        "baseline_power",
        "snr",
        "ratio",
        "amplitude",
    ]
    .map(String::from);
    let rows: Vec<Vec<String>> = study
        .points
        .iter()
        .map(|p| {
            vec![
                p.n_qubits.to_string(),
                num(p.report.signal_power),
                num(p.report.baseline_power),
                num(p.report.snr),
                num(p.ratio),
                num(p.report.tone_amplitude()),
            ]
        })
        .collect();
    bundle.write_csv("summary.csv", &header, &rows)?;
    let n = params.n_qubits;
    for r in 0..config
        .output
        .raw_trajectories
        .min(config.scaling.realizations)
    {
        let run = config.scaling.run(params, r, config.seed);
        let traces = uncoupled_qubit_traces(params, n, &run)?;
        let mut header = vec!["time".to_string()];
        header.extend((0..n).map(|j| format!("sigma_z_{j}")));
        header.push("s_z".into());
        let rows: Vec<Vec<String>> = (0..traces[0].len())
            .map(|k| {
                let mut row = vec![num(k as f64 * run.sample_dt())];
                row.extend(traces.iter().map(|t| num(t[k])));
                row.push(num(traces.iter().map(|t| t[k]).sum()));
                row
            })
            .collect();
        bundle.write_csv(&format!("series/realization{r}.csv"), &header, &rows)?;
    }
    let last = study.points.last().expect("at least one qubit");
    Ok(Headline {
        snr: last.report.snr,
        amplitude: last.report.tone_amplitude(),
    })
}

fn coupled_experiment(config: &ExperimentConfig, bundle: &mut Bundle) -> Result<Headline> {
    let params = &config.params;
    let mut protocol = config.scaling.clone();
    if protocol.coupling_sweep.is_empty() {
        protocol.coupling_sweep = vec![params.g_qq];
    }
    let study = coupling_sweep(params, &protocol, config.seed)?;
    bundle.seeds.push(realization_seeds(config, params));
    bundle.write_spectra(
        "spectra/coupling.csv",
        &study.spectra.iter().collect::<Vec<_>>(),
    )?;
    let header = [
        "g_qq",
        "signal_power",
        "baseline_power",
        "snr",
        "amplitude",
        "resonance_centroid",
        "resonance_peak",
        "min_eigenvalue",
    ]
    .map(String::from);
    let rows: Vec<Vec<String>> = study
        .points
        .iter()
        .map(|p| {
            vec![
                num(p.g_qq),
                num(p.report.signal_power),
                num(p.report.baseline_power),
                num(p.report.snr),
                num(p.amplitude),
                num(p.resonance_centroid),
                num(p.resonance_peak),
                num(p.min_eigenvalue),
            ]
        })
        .collect();
    bundle.write_csv("summary.csv", &header, &rows)?;
    for r in 0..config.output.raw_trajectories.min(protocol.realizations) {
        for &g in &protocol.coupling_sweep {
            let pair = ModelParams {
                g_qq: g,
                ..params.clone()
            };
            let run = protocol.run(&pair, r, config.seed);
            let rec = run_coupled_pair(&pair, &run)?;
            let header = ["time", "s_z"].map(String::from);
            let rows: Vec<Vec<String>> = rec
                .series
                .times
                .iter()
                .zip(&rec.series.sz)
                .map(|(&t, &v)| vec![num(t), num(v)])
                .collect();
            bundle.write_csv(&format!("series/realization{r}_g{g}.csv"), &header, &rows)?;
        }
    }
    let last = study.points.last().expect("non-empty sweep");
    Ok(Headline {
        snr: last.report.snr,
        amplitude: last.amplitude,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub snr: f64,
    pub amplitude: f64,
    pub passed: bool,
}

/// One bundle per value under `config.output_dir`, plus `sweep.csv`.
pub fn sweep(config: &ExperimentConfig, parameter: &str, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return invalid("sweep needs at least one value");
    }
    let root = config.output_dir.clone();
    let mut configs = Vec::with_capacity(values.len());
    for (i, &v) in values.iter().enumerate() {
        let mut c = config.with_parameter(parameter, v)?;
        c.output_dir = root.join(format!("{}_{i:03}", parameter.replace('.', "_")));
        configs.push(c);
    }
    let mut rows = Vec::with_capacity(values.len());
    for (c, &v) in configs.iter().zip(values) {
        log::info!("sweep {parameter} = {v}");
        let out = run_experiment(c)?;
        rows.push(SweepRow {
            value: v,
            snr: out.manifest.headline.snr,
            amplitude: out.manifest.headline.amplitude,
            passed: out.passed(),
        });
    }
    fs::create_dir_all(&root)?;
    let mut w = csv::Writer::from_path(root.join("sweep.csv")).map_err(csv_err)?;
    w.write_record([parameter, "snr", "amplitude", "passed"])
        .map_err(csv_err)?;
    for r in &rows {
        w.write_record([
            num(r.value),
            num(r.snr),
            num(r.amplitude),
            r.passed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(rows)
}
