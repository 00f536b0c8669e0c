//! Config-driven experiment runner: per-seed simulations, CSV reports and a
//! JSON summary.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! seed_<s>/trace.csv
//! seed_<s>/tracking.csv
//! seed_<s>/residuals.csv
//! seed_<s>/support.csv
//! summary.json
//! ```

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fields::{FieldSpec, PiecewiseField};
use crate::io::write_atomic;
use crate::measures::{
    averaged_measure, graph_support_profile, residual_decay_study, support_csv, SupportFractions,
    TestFunctionFamily,
};
use crate::sa_engine::{
    run_sa_with, validate_schedule, IterateTrace, NoiseKind, NoiseModel, SaOptions,
    ScheduleDiagnostics, StepsizeSchedule, DEFAULT_BLOWUP_BOUND,
};
use crate::tracking::{tracking_profile, TrackingReport};

/// Either a builtin field name or an inline coefficient table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldChoice {
    Named(String),
    Inline(FieldSpec),
}

impl FieldChoice {
    pub fn resolve(&self) -> Result<PiecewiseField> {
        match self {
            FieldChoice::Named(name) => PiecewiseField::builtin(name),
            FieldChoice::Inline(spec) => PiecewiseField::from_spec(spec.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingConfig {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n_windows: usize,
    pub dt: f64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            n_windows: 10,
            dt: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasuresConfig {
    /// Empty means `[N/4, N/2, N]`.
    #[serde(default)]
    pub checkpoints: Vec<usize>,
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
}

fn default_eps() -> Vec<f64> {
    vec![0.01, 0.05, 0.1]
}

impl Default for MeasuresConfig {
    fn default() -> Self {
        Self {
            checkpoints: Vec::new(),
            eps: default_eps(),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_blowup_bound() -> f64 {
    DEFAULT_BLOWUP_BOUND
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub field: FieldChoice,
    pub x0: Vec<f64>,
    pub schedule: StepsizeSchedule,
    pub noise: NoiseModel,
    pub n_steps: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub tracking: TrackingConfig,
    #[serde(default)]
    pub measures: MeasuresConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_blowup_bound")]
    pub blowup_bound: f64,
}

impl ExperimentConfig {
    /// Parses JSON; errors name the offending field path.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| Error::config("<root>", e.to_string()))?;
        let parsed: Result<Self, _> = serde_path_to_error::deserialize(&value);
        parsed.map_err(|e| {
            let path = e.path().to_string();
            if path == "field" {
                // untagged enums hide the inner failure; retry as an inline table
                if let Some(inner) = value.get("field").filter(|v| v.is_object()) {
                    let spec: Result<FieldSpec, _> = serde_path_to_error::deserialize(inner);
                    if let Err(e) = spec {
                        return Error::config(format!("field.{}", e.path()), e.inner().to_string());
                    }
                }
            }
            Error::config(path, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }

    /// Resolves the field and checks every cross-field constraint.
    pub fn validate(&self) -> Result<PiecewiseField> {
        let field = self.field.resolve()?;
        let d = field.dimension();
        if self.x0.len() != d {
            return Err(Error::config(
                "x0",
                format!(
                    "field has dimension {d} but x0 has {} components",
                    self.x0.len()
                ),
            ));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("x0", "components must be finite"));
        }
        self.schedule.check("schedule")?;
        self.noise.check("noise")?;
        if self.n_steps == 0 {
            return Err(Error::config("n_steps", "must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if !(self.blowup_bound > 0.0) {
            return Err(Error::config("blowup_bound", "must be > 0"));
        }
        let tr = &self.tracking;
        if !(tr.horizon > 0.0 && tr.horizon.is_finite()) {
            return Err(Error::config(
                "tracking.T",
                "must be a positive finite number",
            ));
        }
        if tr.n_windows == 0 {
            return Err(Error::config("tracking.n_windows", "must be >= 1"));
        }
        if !(tr.dt > 0.0 && tr.dt <= tr.horizon) {
            return Err(Error::config("tracking.dt", "must lie in (0, T]"));
        }
        let total: f64 = (0..self.n_steps).map(|n| self.schedule.stepsize(n)).sum();
        if total / (tr.n_windows as f64) < tr.horizon {
            return Err(Error::config(
                "tracking.n_windows",
                format!(
                    "{} windows of length {} do not fit in t(N) = {total}",
                    tr.n_windows, tr.horizon
                ),
            ));
        }
        let cps = &self.measures.checkpoints;
        if cps.iter().any(|&c| c == 0 || c > self.n_steps) {
            return Err(Error::config(
                "measures.checkpoints",
                "each checkpoint must lie in 1..=n_steps",
            ));
        }
        if cps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config(
                "measures.checkpoints",
                "must be strictly increasing",
            ));
        }
        if self.measures.eps.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::config("measures.eps", "every eps must be > 0"));
        }
        Ok(field)
    }

    pub fn checkpoints(&self) -> Vec<usize> {
        if !self.measures.checkpoints.is_empty() {
            return self.measures.checkpoints.clone();
        }
        let n = self.n_steps;
        let mut cps = vec![(n / 4).max(1), (n / 2).max(1), n];
        cps.dedup();
        cps
    }

    /// Key-sorted compact JSON; the hash is taken over these bytes.
    pub fn canonical_json(&self) -> Vec<u8> {
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_vec(&value).expect("value serializes")
    }

    /// Hex SHA-256 of [`Self::canonical_json`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json()))
    }

    fn sa_options(&self) -> SaOptions {
        SaOptions {
            blowup_bound: self.blowup_bound,
        }
    }
}

/// Recomputes the hash of the config echoed in a summary.
pub fn hash_of_echo(echo: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(
        serde_json::to_vec(echo).expect("value serializes"),
    ))
}

/// Notes on interpretations that differ from the literal source formulas.
pub fn discrepancy_flags(field: &PiecewiseField) -> Vec<String> {
    let mut flags = vec![
        "window end m(n) = min{k : t(k) >= t(n) + T}; the printed formula mixes the step index and the timescale"
            .to_string(),
    ];
    if field.name() == "example1" {
        flags.push(
            "example1 sliding velocity on y = 0 is [1, 0] (the tangent hull combination); the source states 1/sqrt(2)"
                .to_string(),
        );
    }
    flags
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Divergence {
    pub step: usize,
    pub norm: f64,
}

/// Per-seed aggregates written to the summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub diverged: Option<Divergence>,
    pub final_state: Option<Vec<f64>>,
    pub final_time: Option<f64>,
    pub tracking_errors: Vec<f64>,
    pub tracking_head_median: Option<f64>,
    pub tracking_tail_median: Option<f64>,
    /// `max_i |residual_i|` at each checkpoint.
    pub max_residuals: Vec<f64>,
    pub support: Vec<SupportFractions>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScheduleReport {
    pub diagnostics: ScheduleDiagnostics,
    pub verdicts: Vec<String>,
    pub warning: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub config: serde_json::Value,
    pub config_hash: String,
    pub field: String,
    pub noise_density: bool,
    pub schedule: ScheduleReport,
    pub discrepancy_flags: Vec<String>,
    pub any_diverged: bool,
    pub seeds: Vec<SeedSummary>,
}

/// Diagnostics derived from one trace.
#[derive(Clone, Debug)]
pub struct SeedArtifacts {
    pub tracking: TrackingReport,
    pub residuals_csv: Vec<u8>,
    pub max_residuals: Vec<f64>,
    pub support: Vec<SupportFractions>,
}

/// Tracking profile, residual decay over the checkpoints and graph support at
/// the last checkpoint.
pub fn diagnose_trace(
    config: &ExperimentConfig,
    field: &PiecewiseField,
    trace: &IterateTrace,
) -> Result<SeedArtifacts> {
    let tc = &config.tracking;
    let tracking = tracking_profile(
        trace,
        field,
        tc.horizon,
        tc.n_windows,
        tc.dt,
        config.noise.density_flag(),
    )?;
    let checkpoints: Vec<usize> = config
        .checkpoints()
        .into_iter()
        .filter(|&c| c <= trace.n_steps())
        .collect();
    let last = *checkpoints.last().ok_or(Error::EmptyTrace)?;
    let full = averaged_measure(trace, last)?;
    let family = TestFunctionFamily::for_box(full.box_b())?;
    let traces = std::slice::from_ref(trace);
    let table = residual_decay_study(traces, &family, &checkpoints)?;
    let residuals_csv = table.residuals_csv(0, traces);
    let max_residuals = table.rows.iter().map(|r| r.median_max_residual).collect();
    let support = graph_support_profile(&full, field, &config.measures.eps)?;
    Ok(SeedArtifacts {
        tracking,
        residuals_csv,
        max_residuals,
        support,
    })
}

pub fn seed_dir(output_dir: &Path, seed: u64) -> PathBuf {
    output_dir.join(format!("seed_{seed}"))
}

/// Writes `tracking.csv`, `residuals.csv` and `support.csv` into `dir`.
pub fn write_artifacts(dir: &Path, artifacts: &SeedArtifacts) -> Result<()> {
    write_atomic(&dir.join("tracking.csv"), &artifacts.tracking.to_csv())?;
    write_atomic(&dir.join("residuals.csv"), &artifacts.residuals_csv)?;
    write_atomic(&dir.join("support.csv"), &support_csv(&artifacts.support))
}

fn summarize(seed: u64, trace: &IterateTrace, artifacts: &SeedArtifacts) -> SeedSummary {
    SeedSummary {
        seed,
        diverged: None,
        final_state: Some(trace.final_state().to_vec()),
        final_time: Some(trace.final_time()),
        tracking_errors: artifacts.tracking.errors.clone(),
        tracking_head_median: Some(artifacts.tracking.head_median(3)),
        tracking_tail_median: Some(artifacts.tracking.tail_median(3)),
        max_residuals: artifacts.max_residuals.clone(),
        support: artifacts.support.clone(),
    }
}

fn diverged_summary(seed: u64, step: usize, norm: f64) -> SeedSummary {
    SeedSummary {
        seed,
        diverged: Some(Divergence { step, norm }),
        final_state: None,
        final_time: None,
        tracking_errors: Vec::new(),
        tracking_head_median: None,
        tracking_tail_median: None,
        max_residuals: Vec::new(),
        support: Vec::new(),
    }
}

fn run_seed(
    config: &ExperimentConfig,
    field: &PiecewiseField,
    noise: &NoiseModel,
    seed: u64,
    dir: &Path,
) -> Result<SeedSummary> {
    let trace = match run_sa_with(
        field,
        &config.x0,
        &config.schedule,
        noise,
        config.n_steps,
        seed,
        &config.sa_options(),
    ) {
        Ok(t) => t,
        Err(Error::DivergedIterate { step, norm, .. }) => {
            return Ok(diverged_summary(seed, step, norm))
        }
        Err(e) => return Err(e),
    };
    write_atomic(&dir.join("trace.csv"), &trace.to_csv())?;
    let artifacts = diagnose_trace(config, field, &trace)?;
    write_artifacts(dir, &artifacts)?;
    Ok(summarize(seed, &trace, &artifacts))
}

fn schedule_report(config: &ExperimentConfig) -> ScheduleReport {
    let diagnostics = validate_schedule(&config.schedule, config.n_steps);
    let verdicts = diagnostics.violations();
    ScheduleReport {
        warning: !verdicts.is_empty(),
        diagnostics,
        verdicts,
    }
}

/// Runs every seed (in parallel), writes per-seed CSVs and `summary.json`.
/// Divergent seeds are reported in the summary rather than as errors.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    let field = config.validate()?;
    let out = &config.output_dir;
    let seeds = config
        .seeds
        .par_iter()
        .map(|&s| run_seed(config, &field, &config.noise, s, &seed_dir(out, s)))
        .collect::<Result<Vec<_>>>()?;
    let summary = ExperimentSummary {
        config: serde_json::to_value(config).expect("config serializes"),
        config_hash: config.hash(),
        field: field.name().to_string(),
        noise_density: config.noise.density_flag(),
        schedule: schedule_report(config),
        discrepancy_flags: discrepancy_flags(&field),
        any_diverged: seeds.iter().any(|s| s.diverged.is_some()),
        seeds,
    };
    let json = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    write_atomic(&out.join("summary.json"), &json)?;
    Ok(summary)
}

/// Recomputes tracking, residual and support CSVs from the `trace.csv` files
/// already present under `output_dir`.
pub fn recompute_measures(config: &ExperimentConfig) -> Result<Vec<SeedSummary>> {
    let field = config.validate()?;
    config
        .seeds
        .par_iter()
        .map(|&seed| {
            let dir = seed_dir(&config.output_dir, seed);
            let path = dir.join("trace.csv");
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let trace = IterateTrace::from_csv(&bytes, seed, field.name(), &path)?;
            let artifacts = diagnose_trace(config, &field, &trace)?;
            write_artifacts(&dir, &artifacts)?;
            Ok(summarize(seed, &trace, &artifacts))
        })
        .collect()
}

/// One arm of the noise comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyArm {
    pub label: String,
    pub noise: NoiseModel,
    pub density: bool,
    pub seeds: Vec<SeedSummary>,
}

impl StudyArm {
    /// Median over non-divergent seeds of the Filippov fraction at `eps_index`.
    pub fn median_filippov(&self, eps_index: usize) -> f64 {
        let v: Vec<f64> = self
            .seeds
            .iter()
            .filter_map(|s| s.support.get(eps_index).map(|f| f.filippov))
            .collect();
        crate::tracking::median(&v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseStudy {
    pub config_hash: String,
    pub field: String,
    pub density_arm: StudyArm,
    pub atomic_arm: StudyArm,
    pub verdict: String,
    pub discrepancy_flags: Vec<String>,
}

pub const NO_DICHOTOMY_SMOOTH: &str = "no dichotomy (smooth field)";

impl NoiseStudy {
    /// Side-by-side CSV: one row per arm, seed and eps.
    pub fn to_csv(&self) -> Vec<u8> {
        use crate::io::fmt_f64;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "arm",
            "noise_kind",
            "noise_scale",
            "density",
            "seed",
            "diverged",
            "final_time",
            "final_x0",
            "tracking_head_median",
            "tracking_tail_median",
            "eps",
            "filippov_fraction",
            "krasovskii_fraction",
        ])
        .expect("in-memory write");
        for arm in [&self.density_arm, &self.atomic_arm] {
            let kind = serde_json::to_value(arm.noise.kind).expect("kind serializes");
            let kind = kind.as_str().unwrap_or_default().to_string();
            for s in &arm.seeds {
                let support: Vec<Option<&SupportFractions>> = if s.support.is_empty() {
                    vec![None]
                } else {
                    s.support.iter().map(Some).collect()
                };
                for f in support {
                    w.write_record([
                        arm.label.clone(),
                        kind.clone(),
                        fmt_f64(arm.noise.scale),
                        arm.density.to_string(),
                        s.seed.to_string(),
                        s.diverged.is_some().to_string(),
                        opt(s.final_time),
                        opt(s.final_state.as_ref().map(|x| x[0])),
                        opt(s.tracking_head_median),
                        opt(s.tracking_tail_median),
                        opt(f.map(|f| f.eps)),
                        opt(f.map(|f| f.filippov)),
                        opt(f.map(|f| f.krasovskii)),
                    ])
                    .expect("in-memory write");
                }
            }
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// The two noise arms: gaussian with the configured scale (0.1 when the
/// configured scale is zero), and the configured noise if it is atomic,
/// otherwise zero noise.
pub fn study_arms(noise: &NoiseModel) -> (NoiseModel, NoiseModel) {
    let scale = if noise.scale > 0.0 { noise.scale } else { 0.1 };
    let atomic = match noise.kind {
        NoiseKind::Rademacher | NoiseKind::Zero => *noise,
        _ => NoiseModel::zero(),
    };
    (NoiseModel::gaussian(scale), atomic)
}

/// Runs the config under a density noise and an atomic noise and compares
/// tracking and graph support. Files go to `output_dir/density/seed_<s>/`,
/// `output_dir/atomic/seed_<s>/`, plus `study.csv` and `study.json`.
pub fn compare_noise_study(config: &ExperimentConfig) -> Result<NoiseStudy> {
    let field = config.validate()?;
    let (density, atomic) = study_arms(&config.noise);
    let run_arm = |label: &str, noise: NoiseModel| -> Result<StudyArm> {
        let dir = config.output_dir.join(label);
        let seeds = config
            .seeds
            .par_iter()
            .map(|&s| run_seed(config, &field, &noise, s, &seed_dir(&dir, s)))
            .collect::<Result<Vec<_>>>()?;
        Ok(StudyArm {
            label: label.to_string(),
            density: noise.density_flag(),
            noise,
            seeds,
        })
    };
    let density_arm = run_arm("density", density)?;
    let atomic_arm = run_arm("atomic", atomic)?;
    let verdict = if field.guards().is_empty() {
        NO_DICHOTOMY_SMOOTH.to_string()
    } else {
        let gap = density_arm.median_filippov(0) - atomic_arm.median_filippov(0);
        if gap >= 0.5 {
            "dichotomy observed: atomic noise leaves mass off the Filippov graph".to_string()
        } else {
            "no dichotomy observed".to_string()
        }
    };
    let study = NoiseStudy {
        config_hash: config.hash(),
        field: field.name().to_string(),
        density_arm,
        atomic_arm,
        verdict,
        discrepancy_flags: discrepancy_flags(&field),
    };
    write_atomic(&config.output_dir.join("study.csv"), &study.to_csv())?;
    let json = serde_json::to_vec_pretty(&study).expect("study serializes");
    write_atomic(&config.output_dir.join("study.json"), &json)?;
    Ok(study)
}
