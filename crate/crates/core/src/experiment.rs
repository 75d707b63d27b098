//! A single JSON configuration that drives data generation, training,
//! verification and sweeps.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{generate_separated, Dataset};
use crate::error::{Error, Result};
use crate::losses::builtin_loss;
use crate::network::{init_network, NetworkParams};
use crate::optim::{run_sgd, theoretical_step_size, Sampling, TrainConfig, TrainSummary, TrajectoryRecord};
use crate::verify::{InitOptions, PerturbationOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n: usize,
    pub d: usize,
    pub mu: f64,
    pub phi: f64,
    /// Seed of the data draw; `None` uses the experiment seed.
    pub seed: Option<u64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n: 20,
            d: 10,
            mu: 0.5,
            phi: 0.1,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Explicit step size. `None` uses `theoretical_step_size` with `scale`.
    pub eta: Option<f64>,
    pub scale: f64,
    pub max_iters: usize,
    /// `None` means full-batch gradient descent.
    pub batch_size: Option<usize>,
    pub target_loss: f64,
    pub tau: f64,
    pub record_patterns: bool,
    pub stop_on_zero_error: bool,
    pub sampling: Sampling,
    pub norm_every: usize,
    pub snapshots: Option<Vec<usize>>,
}

/// Step-size constant that gives `eta = 0.1 / m` at `n = 20`, `L = 3`,
/// `phi = 0.1`.
pub const DEFAULT_STEP_SCALE: f64 = 1.574_64e8;

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            eta: None,
            scale: DEFAULT_STEP_SCALE,
            max_iters: t.max_iters,
            batch_size: None,
            target_loss: t.target_loss,
            tau: t.tau,
            record_patterns: t.record_patterns,
            stop_on_zero_error: t.stop_on_zero_error,
            sampling: t.sampling,
            norm_every: t.norm_every,
            snapshots: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub init: InitOptions,
    pub perturbation: PerturbationOptions,
    /// Independent initializations for the initialization battery.
    pub trials: usize,
    pub allowed_failures: usize,
    /// Largest accepted `max / min` of a reported constant across trials.
    pub stability_ratio: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            init: InitOptions::default(),
            perturbation: PerturbationOptions::default(),
            trials: 20,
            allowed_failures: 1,
            stability_ratio: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "m")]
    Width,
    #[serde(rename = "phi")]
    Phi,
    #[serde(rename = "n")]
    N,
    #[serde(rename = "L")]
    Depth,
    #[serde(rename = "B")]
    Batch,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::Width => "m",
            SweepAxis::Phi => "phi",
            SweepAxis::N => "n",
            SweepAxis::Depth => "L",
            SweepAxis::Batch => "B",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m" | "width" => Ok(SweepAxis::Width),
            "phi" => Ok(SweepAxis::Phi),
            "n" => Ok(SweepAxis::N),
            "L" | "depth" => Ok(SweepAxis::Depth),
            "B" | "batch" => Ok(SweepAxis::Batch),
            other => Err(Error::invalid(format!("unknown sweep axis '{other}' (expected m, phi, n, L or B)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// Runs per value, with seeds `seed, seed + 1, ...` for the network.
    pub trials: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            axis: SweepAxis::Width,
            values: vec![125.0, 250.0, 500.0, 1000.0, 2000.0],
            trials: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Hidden width `m` of every layer.
    pub width: usize,
    /// Number of hidden layers `L`.
    pub depth: usize,
    pub data: DataConfig,
    pub seed: u64,
    pub loss: String,
    pub train: TrainSection,
    pub verify: VerifySection,
    pub sweep: SweepSection,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            width: 1000,
            depth: 3,
            data: DataConfig::default(),
            seed: 0,
            loss: "logistic".into(),
            train: TrainSection::default(),
            verify: VerifySection::default(),
            sweep: SweepSection::default(),
            out_dir: None,
        }
    }
}

/// `[d, m, ..., m, m_L]` where `m_L` is `m` rounded up to an even number so
/// the output vector can be split evenly.
pub fn layer_dims(d: usize, width: usize, depth: usize) -> Vec<usize> {
    let mut dims = vec![d];
    dims.extend(std::iter::repeat(width).take(depth));
    if let Some(last) = dims.last_mut() {
        if depth > 0 && *last % 2 == 1 {
            *last += 1;
        }
    }
    dims
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.depth == 0 {
            return Err(Error::invalid("width and depth must be >= 1"));
        }
        let d = &self.data;
        if d.n < 2 || d.d < 3 {
            return Err(Error::invalid("data needs n >= 2 and d >= 3"));
        }
        if !(d.mu > 0.0 && d.mu < 1.0) || !(d.phi > 0.0) {
            return Err(Error::invalid("data needs mu in (0, 1) and phi > 0"));
        }
        builtin_loss(&self.loss)?;
        if let Some(eta) = self.train.eta {
            if !(eta >= 0.0) || !eta.is_finite() {
                return Err(Error::invalid(format!("eta must be finite and >= 0, got {eta}")));
            }
        } else if !(self.train.scale > 0.0) {
            return Err(Error::invalid("step-size scale must be > 0"));
        }
        self.train_config()?.validate(d.n)?;
        if self.verify.trials == 0 {
            return Err(Error::invalid("verify.trials must be >= 1"));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        layer_dims(self.data.d, self.width, self.depth)
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.seed)
    }

    pub fn eta(&self) -> f64 {
        self.train.eta.unwrap_or_else(|| {
            theoretical_step_size(self.data.n, self.depth, self.width, self.data.phi, self.train.scale)
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        Ok(TrainConfig {
            eta: self.eta(),
            max_iters: t.max_iters,
            batch_size: t.batch_size,
            target_loss: t.target_loss,
            tau: t.tau,
            seed: self.seed,
            loss: self.loss.clone(),
            record_patterns: t.record_patterns,
            stop_on_zero_error: t.stop_on_zero_error,
            sampling: t.sampling,
            norm_every: t.norm_every,
            norm_tol: TrainConfig::default().norm_tol,
            snapshots: t.snapshots.clone(),
        })
    }

    pub fn dataset(&self) -> Result<Dataset> {
        generate_separated(self.data.n, self.data.d, self.data.mu, self.data.phi, self.data_seed())
    }

    pub fn init_params(&self) -> Result<NetworkParams> {
        init_network(&self.layer_dims(), self.seed)
    }

    /// Copy of this configuration with one axis set to `value`.
    pub fn with_axis(&self, axis: SweepAxis, value: f64) -> Result<Self> {
        let mut cfg = self.clone();
        let as_count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 && v.is_finite() {
                Ok(v as usize)
            } else {
                Err(Error::invalid(format!("sweep value {v} must be a positive integer for axis {axis}")))
            }
        };
        match axis {
            SweepAxis::Width => cfg.width = as_count(value)?,
            SweepAxis::Phi => cfg.data.phi = value,
            SweepAxis::N => cfg.data.n = as_count(value)?,
            SweepAxis::Depth => cfg.depth = as_count(value)?,
            SweepAxis::Batch => cfg.train.batch_size = Some(as_count(value)?),
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub struct TrainOutcome {
    pub dataset: Dataset,
    pub initial: NetworkParams,
    pub trained: NetworkParams,
    pub record: TrajectoryRecord,
}

/// Generates the data, initializes the network and trains it.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dataset = cfg.dataset()?;
    let initial = cfg.init_params()?;
    let loss = builtin_loss(&cfg.loss)?;
    let (trained, record) = run_sgd(&initial, &dataset, &loss, &cfg.train_config()?)?;
    Ok(TrainOutcome {
        dataset,
        initial,
        trained,
        record,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub trial: usize,
    pub seed: u64,
    /// `ok` or the error message of a failed run.
    pub status: String,
    pub eta: Option<f64>,
    pub stop_reason: Option<String>,
    pub iterations: Option<usize>,
    pub iterations_to_zero_error: Option<usize>,
    pub final_loss: Option<f64>,
    pub max_radius: Option<f64>,
    pub max_relative_radius: Option<f64>,
}

impl SweepRow {
    pub const HEADER: [&'static str; 12] = [
        "axis",
        "value",
        "trial",
        "seed",
        "status",
        "eta",
        "stop_reason",
        "iterations",
        "iterations_to_zero_error",
        "final_loss",
        "max_radius",
        "max_relative_radius",
    ];

    pub fn record(&self) -> Vec<String> {
        fn opt<T: fmt::Display>(v: &Option<T>) -> String {
            v.as_ref().map_or(String::new(), |x| x.to_string())
        }
        vec![
            self.axis.to_string(),
            self.value.to_string(),
            self.trial.to_string(),
            self.seed.to_string(),
            self.status.clone(),
            opt(&self.eta),
            opt(&self.stop_reason),
            opt(&self.iterations),
            opt(&self.iterations_to_zero_error),
            opt(&self.final_loss),
            opt(&self.max_radius),
            opt(&self.max_relative_radius),
        ]
    }

    fn failed(axis: SweepAxis, value: f64, trial: usize, seed: u64, err: &Error) -> Self {
        Self {
            axis,
            value,
            trial,
            seed,
            status: format!("error: {err}"),
            eta: None,
            stop_reason: None,
            iterations: None,
            iterations_to_zero_error: None,
            final_loss: None,
            max_radius: None,
            max_relative_radius: None,
        }
    }

    pub fn from_run(axis: SweepAxis, value: f64, trial: usize, cfg: &ExperimentConfig, outcome: &TrainOutcome) -> Result<Self> {
        let summary: TrainSummary = outcome.record.summary();
        let radii = crate::optim::perturbation_radius(&outcome.trained, &outcome.initial)?;
        let mut rel = 0.0f64;
        for (r, w) in radii.iter().zip(outcome.initial.weights()) {
            rel = rel.max(r / crate::linalg::spectral_norm_default(w)?);
        }
        Ok(Self {
            axis,
            value,
            trial,
            seed: cfg.seed,
            status: "ok".into(),
            eta: Some(outcome.record.eta),
            stop_reason: Some(summary.stop_reason.as_str().to_string()),
            iterations: Some(summary.iterations),
            iterations_to_zero_error: summary.iterations_to_zero_error,
            final_loss: Some(summary.final_loss),
            max_radius: Some(radii.iter().copied().fold(0.0, f64::max)),
            max_relative_radius: Some(rel),
        })
    }
}

/// Configuration of sweep point `(value, trial)`: the axis set to `value`
/// and the network seed shifted by `trial`.
pub fn sweep_point_config(base: &ExperimentConfig, value: f64, trial: usize) -> Result<ExperimentConfig> {
    let mut cfg = base.with_axis(base.sweep.axis, value)?;
    cfg.data.seed = Some(base.data_seed());
    cfg.seed = base.seed.wrapping_add(trial as u64);
    Ok(cfg)
}

/// Runs one sweep point. Failures become rows rather than errors.
pub fn run_sweep_point(base: &ExperimentConfig, value: f64, trial: usize) -> (SweepRow, Option<(ExperimentConfig, TrainOutcome)>) {
    let axis = base.sweep.axis;
    let seed = base.seed.wrapping_add(trial as u64);
    let result = sweep_point_config(base, value, trial).and_then(|cfg| {
        let outcome = run_train(&cfg)?;
        let row = SweepRow::from_run(axis, value, trial, &cfg, &outcome)?;
        Ok((row, cfg, outcome))
    });
    match result {
        Ok((row, cfg, outcome)) => (row, Some((cfg, outcome))),
        Err(e) => {
            log::warn!("sweep point {axis}={value} trial {trial} failed: {e}");
            (SweepRow::failed(axis, value, trial, seed, &e), None)
        }
    }
}

/// Sorted merge of sweep rows, written as CSV.
pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.trial.cmp(&b.trial)));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SweepRow::HEADER)?;
    for r in sorted {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_json().unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        let sparse = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(sparse, cfg);
    }

    #[test]
    fn default_eta_is_tenth_over_width() {
        let cfg = ExperimentConfig::default();
        assert_relative_eq!(cfg.eta(), 0.1 / 1000.0, max_relative = 1e-12);
        let wide = cfg.with_axis(SweepAxis::Width, 2000.0).unwrap();
        assert_relative_eq!(wide.eta(), cfg.eta() / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn odd_width_rounds_last_layer() {
        assert_eq!(layer_dims(10, 125, 3), vec![10, 125, 125, 126]);
        assert_eq!(layer_dims(10, 250, 2), vec![10, 250, 250]);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            r#"{"width": 0}"#,
            r#"{"loss": "hinge"}"#,
            r#"{"data": {"mu": 1.5}}"#,
            r#"{"train": {"batch_size": 50}}"#,
            r#"{"train": {"eta": -1.0}}"#,
            r#"{"unknown": 1}"#,
        ] {
            assert!(ExperimentConfig::from_json(text).is_err(), "{text}");
        }
    }

    #[test]
    fn axis_parsing_and_override() {
        assert_eq!("phi".parse::<SweepAxis>().unwrap(), SweepAxis::Phi);
        assert!("q".parse::<SweepAxis>().is_err());
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.with_axis(SweepAxis::Batch, 5.0).unwrap().train.batch_size, Some(5));
        assert_eq!(cfg.with_axis(SweepAxis::Depth, 2.0).unwrap().depth, 2);
        assert!(cfg.with_axis(SweepAxis::N, 2.5).is_err());
    }

    #[test]
    fn failed_sweep_point_becomes_row() {
        let mut cfg = ExperimentConfig {
            width: 16,
            ..ExperimentConfig::default()
        };
        cfg.sweep.axis = SweepAxis::Phi;
        let (row, outcome) = run_sweep_point(&cfg, 5.0, 0);
        assert!(outcome.is_none());
        assert!(row.status.starts_with("error"), "{row:?}");
        let mut buf = Vec::new();
        write_sweep_csv(&[row], &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("axis,value,trial"));
    }

    #[test]
    fn small_run_trains() {
        let mut cfg = ExperimentConfig {
            width: 64,
            depth: 2,
            ..ExperimentConfig::default()
        };
        cfg.data.n = 6;
        cfg.train.eta = Some(0.05);
        cfg.train.max_iters = 300;
        let out = run_train(&cfg).unwrap();
        assert!(out.record.rows.len() >= 2);
        assert!(out.record.rows.last().unwrap().loss < out.record.rows[0].loss);
    }
}
