//! Measurement harness: per-trajectory errors, prediction horizons, tier
//! classification, Lyapunov-normalized horizons, bootstrap confidence
//! intervals, energy drift and report emission (JSON + CSV + SVG).

mod plot;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{read_dataset, Dataset, DatasetError};
use crate::dynamics::{self, SystemState};
use crate::esn::{self, EsnError};
use crate::hnn::{self, HnnError};
use crate::integrators::{
    estimate_lyapunov, integrate, IntegratorConfig, IntegratorError, LyapunovConfig, Trajectory,
};
use crate::lstm::{self, LstmError};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: prediction has {pred} states, truth {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("need at least two values for a confidence interval, got {0}")]
    TooFewValues(usize),
    #[error("model/dataset mismatch: {0}")]
    ModelDatasetMismatch(String),
    #[error("invalid eval config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Esn(#[from] EsnError),
    #[error(transparent)]
    Hnn(#[from] HnnError),
    #[error(transparent)]
    Lstm(#[from] LstmError),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |e| EvalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Position-MAE accuracy bar for the prediction horizon.
    pub error_threshold: f64,
    pub confidence_levels: Vec<f64>,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
    /// Ground-truth states teacher-forced into sequence models before the
    /// closed-loop forecast begins.
    pub warmup: usize,
    /// Internal integration substeps per sample interval for field rollouts.
    pub rollout_substeps: usize,
    /// Per-trajectory Lyapunov estimation of the ground truth; `None`
    /// disables it (horizons are then reported unnormalized).
    pub lyapunov: Option<LyapunovConfig>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            error_threshold: 0.1,
            confidence_levels: vec![0.90, 0.95, 0.98],
            bootstrap_resamples: 1000,
            bootstrap_seed: 0,
            warmup: 20,
            rollout_substeps: 10,
            lyapunov: Some(LyapunovConfig::default()),
        }
    }
}

impl EvalConfig {
    fn validate(&self) -> Result<(), EvalError> {
        if self.error_threshold <= 0.0 {
            return Err(EvalError::InvalidConfig(
                "error_threshold must be positive".into(),
            ));
        }
        if self
            .confidence_levels
            .iter()
            .any(|l| !(0.0..1.0).contains(l) || *l == 0.0)
        {
            return Err(EvalError::InvalidConfig(
                "confidence levels must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Horizon tiers; the boundaries are half-open at 10 and 100.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Fail,
    Tier1,
    Tier2,
    Tier3,
}

impl Tier {
    pub fn name(self) -> &'static str {
        match self {
            Tier::Fail => "fail",
            Tier::Tier1 => "tier1",
            Tier::Tier2 => "tier2",
            Tier::Tier3 => "tier3",
        }
    }
}

/// `fail` below 3 time units, `tier1` in [3, 10), `tier2` in [10, 100),
/// `tier3` at or above 100.
pub fn tier_classify(horizon: f64) -> Tier {
    assert!(horizon >= 0.0, "horizon must be non-negative");
    if horizon < 3.0 {
        Tier::Fail
    } else if horizon < 10.0 {
        Tier::Tier1
    } else if horizon < 100.0 {
        Tier::Tier2
    } else {
        Tier::Tier3
    }
}

/// Position mean absolute error at each aligned sample.
pub fn mae_curve(pred: &[SystemState], truth: &[SystemState]) -> Result<Vec<f64>, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    Ok(pred
        .iter()
        .zip(truth.iter())
        .map(|(p, t)| position_mae(p, t))
        .collect())
}

fn position_mae(pred: &SystemState, truth: &SystemState) -> f64 {
    let d = truth.dim.components();
    let mut sum = 0.0;
    for i in 0..3 {
        let diff = pred.positions[i] - truth.positions[i];
        sum += diff.x.abs() + diff.y.abs();
        if d == 3 {
            sum += diff.z.abs();
        }
    }
    sum / (3 * d) as f64
}

fn velocity_mae(pred: &SystemState, truth: &SystemState) -> f64 {
    let d = truth.dim.components();
    let mut sum = 0.0;
    for i in 0..3 {
        let diff = pred.velocities[i] - truth.velocities[i];
        sum += diff.x.abs() + diff.y.abs();
        if d == 3 {
            sum += diff.z.abs();
        }
    }
    sum / (3 * d) as f64
}

/// Time-mean of the per-step position MAE.
pub fn trajectory_mae(pred: &[SystemState], truth: &[SystemState]) -> Result<f64, EvalError> {
    let curve = mae_curve(pred, truth)?;
    Ok(curve.iter().sum::<f64>() / curve.len() as f64)
}

/// Horizon from a forecast-aligned MAE curve: sample `k` (0-based) sits
/// `(k + 1) * dt` after the forecast start, so the first exceedance at `k`
/// leaves `k * dt` of accurate prediction; a clean curve spans the whole
/// forecast.
pub fn horizon_from_curve(curve: &[f64], dt_sample: f64, threshold: f64) -> f64 {
    for (k, value) in curve.iter().enumerate() {
        if *value > threshold {
            return k as f64 * dt_sample;
        }
    }
    curve.len() as f64 * dt_sample
}

/// Prediction horizon of an aligned (prediction, truth) pair of forecast
/// segments; both sequences start at the first predicted sample.
pub fn prediction_horizon(
    pred: &[SystemState],
    truth: &[SystemState],
    threshold: f64,
) -> Result<f64, EvalError> {
    let curve = mae_curve(pred, truth)?;
    let dt = if truth.len() >= 2 {
        truth[1].time - truth[0].time
    } else {
        1.0
    };
    Ok(horizon_from_curve(&curve, dt, threshold))
}

/// `T / t_lyap`; not applicable (None) for regular trajectories.
pub fn lyapunov_normalized_horizon(horizon: f64, t_lyap: f64) -> Option<f64> {
    if t_lyap.is_finite() && t_lyap > 0.0 {
        Some(horizon / t_lyap)
    } else {
        None
    }
}

/// Bootstrap percentile intervals for the mean at each requested level,
/// sharing one resample set (so wider levels always nest the narrower).
pub fn confidence_intervals(
    values: &[f64],
    levels: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>, EvalError> {
    if values.len() < 2 {
        return Err(EvalError::TooFewValues(values.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut sum = 0.0;
        for _ in 0..values.len() {
            sum += values[rng.gen_range(0..values.len())];
        }
        means.push(sum / values.len() as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(levels
        .iter()
        .map(|level| {
            let alpha = (1.0 - level) / 2.0;
            (quantile(&means, alpha), quantile(&means, 1.0 - alpha))
        })
        .collect())
}

/// Linear-interpolation quantile of a sorted slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Max relative energy drift along a predicted trajectory. A singular
/// predicted state truncates the scan and sets the flag; the drift up to
/// that point is still reported.
pub fn energy_drift(states: &[SystemState]) -> (f64, bool) {
    let mut reference = None;
    let mut drift = 0.0f64;
    for state in states {
        match dynamics::total_energy(state) {
            Ok(e) => match reference {
                None => reference = Some(e),
                Some(e0) => drift = drift.max(((e - e0) / e0).abs()),
            },
            Err(_) => return (drift, true),
        }
    }
    (drift, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Esn,
    Hnn,
    Lstm,
    /// Re-runs the reference integrator; validates the harness end to end.
    Oracle,
    /// Holds the last observed state; the no-skill floor.
    Constant,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Esn => "esn",
            ModelKind::Hnn => "hnn",
            ModelKind::Lstm => "lstm",
            ModelKind::Oracle => "oracle",
            ModelKind::Constant => "constant",
        }
    }

    pub fn needs_file(self) -> bool {
        matches!(self, ModelKind::Esn | ModelKind::Hnn | ModelKind::Lstm)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "esn" => Ok(ModelKind::Esn),
            "hnn" => Ok(ModelKind::Hnn),
            "lstm" => Ok(ModelKind::Lstm),
            "oracle" => Ok(ModelKind::Oracle),
            "constant" => Ok(ModelKind::Constant),
            other => Err(format!("unknown model kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEval {
    pub index: usize,
    pub horizon: f64,
    pub tier: Tier,
    /// None when the ground truth looks regular (infinite Lyapunov time) or
    /// the estimate failed; see `lyapunov_status`.
    pub t_lyap: Option<f64>,
    pub lyapunov_status: String,
    pub normalized_horizon: Option<f64>,
    pub mean_mae: f64,
    pub mae_curve: Vec<f64>,
    pub mean_velocity_mae: f64,
    pub energy_drift: f64,
    pub energy_drift_truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub level: f64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_horizon: f64,
    pub median_horizon: f64,
    pub horizon_cis: Vec<ConfidenceInterval>,
    pub tier_counts: [usize; 4],
    pub max_energy_drift: f64,
    pub mean_energy_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub report_version: u32,
    pub model_kind: ModelKind,
    pub model_path: Option<String>,
    pub dataset_manifest: String,
    pub dataset_manifest_sha256: String,
    pub config: EvalConfig,
    pub forecast_dt: f64,
    pub per_trajectory: Vec<TrajectoryEval>,
    pub aggregate: Aggregate,
}

enum LoadedModel {
    Esn(esn::EsnModel),
    Hnn(hnn::HnnModel),
    Lstm(lstm::LstmModel),
    Oracle(IntegratorConfig),
    Constant,
}

/// Closed-loop (or field-rollout) predictions for one test trajectory,
/// aligned with `truth.states[start..]`; returns (start, predicted states).
fn predict(
    model: &LoadedModel,
    truth: &Trajectory,
    config: &EvalConfig,
) -> Result<(usize, Vec<SystemState>), EvalError> {
    let states = &truth.states;
    let dt = truth.meta.dt_sample;
    let masses = states[0].masses;
    let dim = states[0].dim;
    match model {
        LoadedModel::Esn(m) => {
            let warmup: Vec<Vec<f64>> = states[..config.warmup]
                .iter()
                .map(|s| s.to_flat())
                .collect();
            let n_steps = states.len() - config.warmup;
            let flats = esn::forecast(m, &warmup, n_steps)?;
            let preds = flats
                .iter()
                .enumerate()
                .map(|(k, f)| {
                    SystemState::from_flat(f, masses, states[config.warmup + k].time, dim)
                })
                .collect();
            Ok((config.warmup, preds))
        }
        LoadedModel::Lstm(m) => {
            let warmup: Vec<Vec<f64>> = states[..config.warmup]
                .iter()
                .map(|s| s.to_flat())
                .collect();
            let n_steps = states.len() - config.warmup;
            let flats = lstm::rollout(m, &warmup, n_steps)?;
            let preds = flats
                .iter()
                .enumerate()
                .map(|(k, f)| {
                    SystemState::from_flat(f, masses, states[config.warmup + k].time, dim)
                })
                .collect();
            Ok((config.warmup, preds))
        }
        LoadedModel::Hnn(m) => {
            let substeps = config.rollout_substeps.max(1);
            let n_samples = states.len() - 1;
            let traj = hnn::rollout(m, &states[0], n_samples * substeps, dt / substeps as f64)?;
            let preds = (1..=n_samples)
                .map(|k| {
                    let mut s = traj.states[k * substeps];
                    s.time = states[k].time;
                    s
                })
                .collect();
            Ok((1, preds))
        }
        LoadedModel::Oracle(integrator) => {
            // Stored trajectories are the tighter run of the convergence
            // certificate, so the oracle replays at tolerance / 10.
            let mut config = *integrator;
            config.dt_sample = dt;
            config.tolerance /= 10.0;
            let t_end = states.last().unwrap().time;
            let traj = integrate(&states[0], t_end, &config)?;
            Ok((1, traj.states[1..].to_vec()))
        }
        LoadedModel::Constant => {
            let held = states[config.warmup - 1];
            let preds = states[config.warmup..]
                .iter()
                .map(|s| {
                    let mut p = held;
                    p.time = s.time;
                    p
                })
                .collect();
            Ok((config.warmup, preds))
        }
    }
}

fn require_path(kind: ModelKind, p: Option<&Path>) -> Result<&Path, EvalError> {
    p.ok_or_else(|| {
        EvalError::InvalidConfig(format!("{} evaluation requires a model file", kind.name()))
    })
}

fn load_model(kind: ModelKind, path: Option<&Path>, dataset: &Dataset) -> Result<LoadedModel, EvalError> {
    let input_dim = 6 * dataset.manifest.sampler.dim.components();
    match kind {
        ModelKind::Esn => {
            let model = esn::load_model(require_path(kind, path)?)?;
            if model.input_dim != input_dim {
                return Err(EvalError::ModelDatasetMismatch(format!(
                    "esn consumes {} values, dataset states have {input_dim}",
                    model.input_dim
                )));
            }
            Ok(LoadedModel::Esn(model))
        }
        ModelKind::Hnn => {
            let model = hnn::load_model(require_path(kind, path)?)?;
            if model.input_dim() != input_dim {
                return Err(EvalError::ModelDatasetMismatch(format!(
                    "hnn consumes {} values, dataset states have {input_dim}",
                    model.input_dim()
                )));
            }
            Ok(LoadedModel::Hnn(model))
        }
        ModelKind::Lstm => {
            let model = lstm::load_model(require_path(kind, path)?)?;
            if model.input_dim != input_dim {
                return Err(EvalError::ModelDatasetMismatch(format!(
                    "lstm consumes {} values, dataset states have {input_dim}",
                    model.input_dim
                )));
            }
            Ok(LoadedModel::Lstm(model))
        }
        ModelKind::Oracle => Ok(LoadedModel::Oracle(dataset.manifest.integrator)),
        ModelKind::Constant => Ok(LoadedModel::Constant),
    }
}

/// Evaluate a model against every test trajectory of a dataset and write
/// `report.json`, `report.csv` and `report.svg` into `out_dir`.
pub fn evaluate_model(
    kind: ModelKind,
    model_path: Option<&Path>,
    manifest_path: &Path,
    config: &EvalConfig,
    out_dir: &Path,
) -> Result<EvalReport, EvalError> {
    config.validate()?;
    let dataset = read_dataset(manifest_path)?;
    if dataset.test.is_empty() {
        return Err(EvalError::InvalidConfig("dataset has no test split".into()));
    }
    let min_len = config.warmup.max(2) + 1;
    for traj in &dataset.test {
        if traj.len() < min_len {
            return Err(EvalError::InvalidConfig(format!(
                "test trajectory of {} states is too short for warmup {}",
                traj.len(),
                config.warmup
            )));
        }
    }
    let model = load_model(kind, model_path, &dataset)?;

    let manifest_bytes = std::fs::read(manifest_path).map_err(io_err(manifest_path))?;
    let digest = Sha256::digest(&manifest_bytes);
    let manifest_sha = format!("{digest:x}");

    let lyap_integrator = IntegratorConfig {
        dt_sample: dataset.manifest.dt_sample,
        ..dataset.manifest.integrator
    };

    let evals: Result<Vec<TrajectoryEval>, EvalError> = dataset
        .test
        .par_iter()
        .enumerate()
        .map(|(index, truth)| {
            let (start, preds) = predict(&model, truth, config)?;
            let truth_slice = &truth.states[start..];
            let curve = mae_curve(&preds, truth_slice)?;
            let dt = truth.meta.dt_sample;
            let horizon = horizon_from_curve(&curve, dt, config.error_threshold);
            let tier = tier_classify(horizon);
            let mean_mae = curve.iter().sum::<f64>() / curve.len() as f64;
            let mean_velocity_mae = preds
                .iter()
                .zip(truth_slice.iter())
                .map(|(p, t)| velocity_mae(p, t))
                .sum::<f64>()
                / preds.len() as f64;
            let (drift, truncated) = energy_drift(&preds);

            let (t_lyap, status) = match &config.lyapunov {
                None => (None, "disabled".to_string()),
                Some(lyap) => match estimate_lyapunov(&truth.states[0], &lyap_integrator, lyap) {
                    Ok(est) if est.t_lyap.is_finite() => {
                        (Some(est.t_lyap), "estimated".to_string())
                    }
                    Ok(_) => (None, "regular".to_string()),
                    Err(e) => (None, format!("failed: {e}")),
                },
            };
            let normalized_horizon =
                t_lyap.and_then(|t| lyapunov_normalized_horizon(horizon, t));

            Ok(TrajectoryEval {
                index,
                horizon,
                tier,
                t_lyap,
                lyapunov_status: status,
                normalized_horizon,
                mean_mae,
                mae_curve: curve,
                mean_velocity_mae,
                energy_drift: drift,
                energy_drift_truncated: truncated,
            })
        })
        .collect();
    let per_trajectory = evals?;

    let horizons: Vec<f64> = per_trajectory.iter().map(|e| e.horizon).collect();
    let mut sorted = horizons.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cis = if horizons.len() >= 2 {
        confidence_intervals(
            &horizons,
            &config.confidence_levels,
            config.bootstrap_resamples,
            config.bootstrap_seed,
        )?
    } else {
        vec![(horizons[0], horizons[0]); config.confidence_levels.len()]
    };
    let mut tier_counts = [0usize; 4];
    for e in &per_trajectory {
        tier_counts[match e.tier {
            Tier::Fail => 0,
            Tier::Tier1 => 1,
            Tier::Tier2 => 2,
            Tier::Tier3 => 3,
        }] += 1;
    }
    let aggregate = Aggregate {
        mean_horizon: horizons.iter().sum::<f64>() / horizons.len() as f64,
        median_horizon: quantile(&sorted, 0.5),
        horizon_cis: config
            .confidence_levels
            .iter()
            .zip(cis.iter())
            .map(|(level, (low, high))| ConfidenceInterval {
                level: *level,
                low: *low,
                high: *high,
            })
            .collect(),
        tier_counts,
        max_energy_drift: per_trajectory
            .iter()
            .map(|e| e.energy_drift)
            .fold(0.0, f64::max),
        mean_energy_drift: per_trajectory.iter().map(|e| e.energy_drift).sum::<f64>()
            / per_trajectory.len() as f64,
    };

    let report = EvalReport {
        report_version: REPORT_VERSION,
        model_kind: kind,
        model_path: model_path.map(|p| p.display().to_string()),
        dataset_manifest: manifest_path.display().to_string(),
        dataset_manifest_sha256: manifest_sha,
        config: config.clone(),
        forecast_dt: dataset.manifest.dt_sample,
        per_trajectory,
        aggregate,
    };
    write_report(&report, out_dir)?;
    Ok(report)
}

/// Serialize a report as `report.json`, `report.csv` and `report.svg`.
pub fn write_report(report: &EvalReport, out_dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let json_path = out_dir.join("report.json");
    let json = serde_json::to_string_pretty(report).expect("report serialization cannot fail");
    std::fs::write(&json_path, json).map_err(io_err(&json_path))?;

    let csv_path = out_dir.join("report.csv");
    let mut csv = String::from("index,horizon,tier,t_lyap,normalized_horizon,mean_mae,energy_drift\n");
    for e in &report.per_trajectory {
        let t_lyap = match e.t_lyap {
            Some(t) => format!("{t:.6e}"),
            None => "inf".to_string(),
        };
        let norm = match e.normalized_horizon {
            Some(n) => format!("{n:.6e}"),
            None => "na".to_string(),
        };
        csv.push_str(&format!(
            "{},{:.6e},{},{},{},{:.6e},{:.6e}\n",
            e.index,
            e.horizon,
            e.tier.name(),
            t_lyap,
            norm,
            e.mean_mae,
            e.energy_drift
        ));
    }
    std::fs::write(&csv_path, csv).map_err(io_err(&csv_path))?;

    let svg_path = out_dir.join("report.svg");
    let svg = plot::report_svg(report);
    std::fs::write(&svg_path, svg).map_err(io_err(&svg_path))?;
    Ok(())
}

/// Read back a JSON report.
pub fn read_report(path: &Path) -> Result<EvalReport, EvalError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let report: EvalReport = serde_json::from_str(&text).map_err(|e| EvalError::Io {
        path: path.to_path_buf(),
        message: format!("bad report: {e}"),
    })?;
    if report.report_version != REPORT_VERSION {
        return Err(EvalError::Io {
            path: path.to_path_buf(),
            message: format!("unsupported report version {}", report.report_version),
        });
    }
    Ok(report)
}
