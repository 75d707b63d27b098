//! Gradient descent and minibatch SGD from a Gaussian initialization, with
//! per-iteration telemetry of the quantities that govern lazy training:
//! loss, distance from initialization, gradient norms, activation-pattern
//! drift and the per-step change of each example's output.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, pattern_diff_count, power_iteration, Matrix, Pattern};
use crate::losses::{builtin_loss, LossSpec};
use crate::network::{
    forward_dataset, loss_coefficients, margins, mean_loss, weighted_output_gradient, BatchTrace,
    LayerGradients, NetworkParams,
};
use crate::rng::{Rng, Stream};

/// `scale * phi / (n^3 L^9 m)`. The absolute constant of the step-size rate is
/// left to the caller as `scale`.
pub fn theoretical_step_size(n: usize, depth: usize, width: usize, phi: f64, scale: f64) -> f64 {
    let n = n as f64;
    let l = depth as f64;
    scale * phi / (n.powi(3) * l.powi(9) * width as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// A fresh uniform subset every step.
    WithoutReplacement,
    /// Consecutive chunks of a per-epoch shuffle; a trailing partial chunk is
    /// dropped.
    EpochShuffle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub eta: f64,
    pub max_iters: usize,
    /// `None` means full batch.
    pub batch_size: Option<usize>,
    pub target_loss: f64,
    /// Radius of the spectral-norm ball around initialization; leaving it
    /// raises a warning, not an error.
    pub tau: f64,
    pub seed: u64,
    pub loss: String,
    pub record_patterns: bool,
    pub stop_on_zero_error: bool,
    pub sampling: Sampling,
    /// Spectral norms (radii, gradient spectral norms) are computed on rows
    /// with `k % norm_every == 0` and on the final row.
    pub norm_every: usize,
    pub norm_tol: f64,
    /// Iterations at which pattern drift and the gradient ratio are recorded.
    /// `None` means `{0, K/4, K/2, 3K/4, K}`. The final row is always included.
    pub snapshots: Option<Vec<usize>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            max_iters: 5000,
            batch_size: None,
            target_loss: 1e-3,
            tau: 1.0,
            seed: 0,
            loss: "logistic".into(),
            record_patterns: true,
            stop_on_zero_error: true,
            sampling: Sampling::WithoutReplacement,
            norm_every: 1,
            norm_tol: 1e-10,
            snapshots: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::invalid(format!("eta must be finite and >= 0, got {}", self.eta)));
        }
        if let Some(b) = self.batch_size {
            if b == 0 || b > n {
                return Err(Error::invalid(format!("batch size must be in 1..={n}, got {b}")));
            }
        }
        if !(self.target_loss > 0.0) {
            return Err(Error::invalid("target_loss must be > 0"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::invalid("tau must be > 0"));
        }
        if self.norm_every == 0 {
            return Err(Error::invalid("norm_every must be >= 1"));
        }
        if !(self.norm_tol > 0.0) {
            return Err(Error::invalid("norm_tol must be > 0"));
        }
        builtin_loss(&self.loss)?;
        Ok(())
    }

    fn snapshot_set(&self) -> Vec<usize> {
        let k = self.max_iters;
        let mut s = self
            .snapshots
            .clone()
            .unwrap_or_else(|| vec![0, k / 4, k / 2, 3 * k / 4, k]);
        s.sort_unstable();
        s.dedup();
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetLoss,
    ZeroError,
    MaxIters,
    Diverged,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::TargetLoss => "target_loss",
            StopReason::ZeroError => "zero_error",
            StopReason::MaxIters => "max_iters",
            StopReason::Diverged => "diverged",
        }
    }
}

/// Telemetry for iterate `W^(k)`. Gradient columns describe the (stochastic)
/// gradient applied in the step from `k` to `k + 1`; on the final row they
/// describe the full gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub k: usize,
    pub loss: f64,
    pub misclassified: usize,
    pub min_margin: f64,
    pub max_margin: f64,
    /// `sum_i l'(y_i y_hat_i)` over the whole training set.
    pub sum_loss_deriv: f64,
    /// Mean of `l'` over the examples whose gradient was applied.
    pub batch_mean_loss_deriv: f64,
    /// `|W_l^(k) - W_l^(0)|_2`, on norm rows.
    pub radius: Option<Vec<f64>>,
    pub grad_spectral: Option<Vec<f64>>,
    pub grad_frobenius: Vec<f64>,
    /// Per layer, `max_i |Sigma_{l,i}^(k) - Sigma_{l,i}^(0)|_0`, on snapshot rows.
    pub pattern_drift: Option<Vec<usize>>,
    /// `|grad_{W_L} L_S|_F^2 n^5 / (m_L phi (sum_i l')^2)`, on snapshot rows.
    pub gradient_ratio: Option<f64>,
    /// Statistics of `Delta_i = y_i (y_hat_i^(k+1) - y_hat_i^(k))`; absent on
    /// the final row.
    pub delta_max_abs: Option<f64>,
    pub delta_min: Option<f64>,
    pub delta_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusWarning {
    pub k: usize,
    pub layer: usize,
    pub radius: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub k: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub rows: Vec<TrajectoryRow>,
    pub stop_reason: StopReason,
    pub warnings: Vec<RadiusWarning>,
    pub divergence: Option<Divergence>,
    pub eta: f64,
    pub batch_size: usize,
    pub n: usize,
    pub depth: usize,
    pub max_width: usize,
    pub last_width: usize,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_misclassified: usize,
    /// First iteration with zero misclassified examples, if any.
    pub iterations_to_zero_error: Option<usize>,
    pub final_radius: Vec<f64>,
    pub max_radius: Vec<f64>,
    pub max_radius_overall: f64,
    pub min_margin_seen: f64,
    pub max_margin_seen: f64,
    pub radius_warnings: usize,
    pub eta: f64,
    pub batch_size: usize,
    pub diverged_at: Option<usize>,
}

impl TrajectoryRecord {
    pub fn last(&self) -> Option<&TrajectoryRow> {
        self.rows.last()
    }

    pub fn iterations(&self) -> usize {
        self.rows.last().map_or(0, |r| r.k)
    }

    pub fn summary(&self) -> TrainSummary {
        let first = self.rows.first();
        let last = self.rows.last();
        let mut max_radius = vec![0.0; self.depth];
        for r in self.rows.iter().filter_map(|r| r.radius.as_ref()) {
            for (m, v) in max_radius.iter_mut().zip(r) {
                *m = f64::max(*m, *v);
            }
        }
        let final_radius = self
            .rows
            .iter()
            .rev()
            .find_map(|r| r.radius.clone())
            .unwrap_or_else(|| vec![0.0; self.depth]);
        TrainSummary {
            stop_reason: self.stop_reason,
            iterations: self.iterations(),
            initial_loss: first.map_or(f64::NAN, |r| r.loss),
            final_loss: last.map_or(f64::NAN, |r| r.loss),
            final_misclassified: last.map_or(self.n, |r| r.misclassified),
            iterations_to_zero_error: self.rows.iter().find(|r| r.misclassified == 0).map(|r| r.k),
            max_radius_overall: max_radius.iter().copied().fold(0.0, f64::max),
            final_radius,
            max_radius,
            min_margin_seen: self.rows.iter().map(|r| r.min_margin).fold(f64::INFINITY, f64::min),
            max_margin_seen: self
                .rows
                .iter()
                .map(|r| r.max_margin)
                .fold(f64::NEG_INFINITY, f64::max),
            radius_warnings: self.warnings.len(),
            eta: self.eta,
            batch_size: self.batch_size,
            diverged_at: self.divergence.as_ref().map(|d| d.k),
        }
    }

    /// Column names of [`TrajectoryRecord::write_csv`].
    pub fn csv_header(depth: usize) -> Vec<String> {
        let mut h: Vec<String> = [
            "k",
            "loss",
            "misclassified",
            "min_margin",
            "max_margin",
            "sum_loss_deriv",
            "batch_mean_loss_deriv",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for prefix in ["radius", "grad_spectral", "grad_frobenius", "pattern_drift"] {
            h.extend((1..=depth).map(|l| format!("{prefix}_{l}")));
        }
        h.extend(
            ["gradient_ratio", "delta_max_abs", "delta_min", "delta_mean"]
                .iter()
                .map(|s| s.to_string()),
        );
        h
    }

    /// One row per iteration; absent values are empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::csv_header(self.depth))?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        let opt_vec = |v: &Option<Vec<f64>>, depth: usize| -> Vec<String> {
            match v {
                Some(v) => v.iter().map(|x| format!("{x}")).collect(),
                None => vec![String::new(); depth],
            }
        };
        for r in &self.rows {
            let mut rec = vec![
                r.k.to_string(),
                format!("{}", r.loss),
                r.misclassified.to_string(),
                format!("{}", r.min_margin),
                format!("{}", r.max_margin),
                format!("{}", r.sum_loss_deriv),
                format!("{}", r.batch_mean_loss_deriv),
            ];
            rec.extend(opt_vec(&r.radius, self.depth));
            rec.extend(opt_vec(&r.grad_spectral, self.depth));
            rec.extend(r.grad_frobenius.iter().map(|x| format!("{x}")));
            match &r.pattern_drift {
                Some(d) => rec.extend(d.iter().map(|x| x.to_string())),
                None => rec.extend(vec![String::new(); self.depth]),
            }
            rec.push(opt(r.gradient_ratio));
            rec.push(opt(r.delta_max_abs));
            rec.push(opt(r.delta_min));
            rec.push(opt(r.delta_mean));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Number of examples with `y_i y_hat_i <= 0`. Ties count as errors.
pub fn zero_error_check(params: &NetworkParams, data: &Dataset) -> Result<usize> {
    let trace = forward_dataset(params, data)?;
    Ok(count_errors(&trace.outputs, data))
}

fn count_errors(outputs: &[f64], data: &Dataset) -> usize {
    margins(outputs, data).into_iter().filter(|m| !(*m > 0.0)).count()
}

/// `|W_l - W_l^(0)|_2` for every layer.
pub fn perturbation_radius(params: &NetworkParams, params0: &NetworkParams) -> Result<Vec<f64>> {
    if params.layer_dims() != params0.layer_dims() {
        return Err(Error::invalid(format!(
            "layer dims differ: {:?} vs {:?}",
            params.layer_dims(),
            params0.layer_dims()
        )));
    }
    params
        .weights()
        .iter()
        .zip(params0.weights())
        .map(|(w, w0)| crate::linalg::spectral_norm_default(&w.sub(w0)?))
        .collect()
}

/// Power iteration that keeps its last singular vector between calls.
struct WarmNorm {
    vector: Option<Vec<f64>>,
    tol: f64,
}

impl WarmNorm {
    fn new(tol: f64) -> Self {
        Self { vector: None, tol }
    }

    fn norm(&mut self, m: &Matrix) -> f64 {
        match power_iteration(m, self.vector.as_deref(), self.tol, 10_000) {
            Ok(est) => {
                self.vector = Some(est.vector);
                est.sigma
            }
            Err(Error::NonConvergence {
                estimate, vector, residual, ..
            }) => {
                log::warn!("telemetry spectral norm not converged (residual {residual:e}); using estimate");
                self.vector = Some(vector);
                estimate
            }
            Err(e) => {
                log::warn!("telemetry spectral norm failed: {e}");
                f64::NAN
            }
        }
    }
}

fn initial_patterns(trace: &BatchTrace, depth: usize) -> Vec<Vec<Pattern>> {
    (1..=depth)
        .map(|l| (0..trace.len()).map(|i| trace.pattern(l, i)).collect())
        .collect()
}

fn pattern_drift(trace: &BatchTrace, initial: &[Vec<Pattern>]) -> Result<Vec<usize>> {
    initial
        .iter()
        .enumerate()
        .map(|(idx, per_example)| {
            let l = idx + 1;
            per_example
                .iter()
                .enumerate()
                .map(|(i, p0)| pattern_diff_count(&trace.pattern(l, i), p0))
                .try_fold(0usize, |acc, d| d.map(|d| acc.max(d)))
        })
        .collect()
}

/// `|grad_{W_L} L_S|_F^2 n^5 / (m_L phi (sum_i l')^2)`.
pub fn gradient_ratio(grad_last_frobenius: f64, n: usize, last_width: usize, phi: f64, sum_loss_deriv: f64) -> f64 {
    let n = n as f64;
    grad_last_frobenius.powi(2) * n.powi(5) / (last_width as f64 * phi * sum_loss_deriv.powi(2))
}

struct BatchSampler {
    n: usize,
    batch: usize,
    sampling: Sampling,
    rng: Rng,
    perm: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    fn new(n: usize, batch: usize, sampling: Sampling, seed: u64) -> Self {
        Self {
            n,
            batch,
            sampling,
            rng: Rng::with_stream(seed, Stream::Batches),
            perm: Vec::new(),
            cursor: usize::MAX,
        }
    }

    /// Ascending example indices of the next minibatch.
    fn next_batch(&mut self) -> Vec<usize> {
        if self.batch == self.n {
            return (0..self.n).collect();
        }
        match self.sampling {
            Sampling::WithoutReplacement => self.rng.sample_without_replacement(self.n, self.batch),
            Sampling::EpochShuffle => {
                if self.cursor == usize::MAX || self.cursor + self.batch > self.n {
                    self.perm = (0..self.n).collect();
                    self.rng.shuffle(&mut self.perm);
                    self.cursor = 0;
                }
                let mut b = self.perm[self.cursor..self.cursor + self.batch].to_vec();
                self.cursor += self.batch;
                b.sort_unstable();
                b
            }
        }
    }
}

/// Full-batch gradient descent: `W^(k+1) = W^(k) - eta grad L_S(W^(k))`.
/// `config.batch_size` is ignored.
pub fn run_gd(
    params0: &NetworkParams,
    data: &Dataset,
    loss: &LossSpec,
    config: &TrainConfig,
) -> Result<(NetworkParams, TrajectoryRecord)> {
    let cfg = TrainConfig {
        batch_size: None,
        ..config.clone()
    };
    train(params0, data, loss, &cfg)
}

/// Minibatch SGD: `W^(k+1) = W^(k) - eta (1/B) sum_{i in B_k} grad l(y_i f(x_i))`.
/// With `B = n` the batch is every example in index order, which reproduces
/// [`run_gd`] exactly.
pub fn run_sgd(
    params0: &NetworkParams,
    data: &Dataset,
    loss: &LossSpec,
    config: &TrainConfig,
) -> Result<(NetworkParams, TrajectoryRecord)> {
    train(params0, data, loss, config)
}

fn train(
    params0: &NetworkParams,
    data: &Dataset,
    loss: &LossSpec,
    config: &TrainConfig,
) -> Result<(NetworkParams, TrajectoryRecord)> {
    config.validate(data.n())?;
    if data.dim() != params0.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "training data dimension",
            expected: params0.input_dim(),
            found: data.dim(),
        });
    }
    let n = data.n();
    let depth = params0.depth();
    let batch_size = config.batch_size.unwrap_or(n);
    let last_width = *params0.layer_dims().last().unwrap();
    let snapshots = config.snapshot_set();
    let all: Vec<usize> = (0..n).collect();
    let inputs = data.input_matrix();

    let mut sampler = BatchSampler::new(n, batch_size, config.sampling, config.seed);
    let mut params = params0.clone();
    let mut rows: Vec<TrajectoryRow> = Vec::new();
    let mut warnings = Vec::new();
    let mut divergence = None;
    let mut radius_norms: Vec<WarmNorm> = (0..depth).map(|_| WarmNorm::new(config.norm_tol)).collect();
    let mut grad_norms: Vec<WarmNorm> = (0..depth).map(|_| WarmNorm::new(config.norm_tol)).collect();
    let mut patterns0: Option<Vec<Vec<Pattern>>> = None;
    let mut prev_outputs: Option<Vec<f64>> = None;
    let mut stop = StopReason::MaxIters;
    let mut warned_layers = vec![false; depth];

    for k in 0..=config.max_iters {
        let trace = crate::network::forward_batch(&params, &inputs)?;
        let loss_value = mean_loss(&trace.outputs, data, loss);
        if !loss_value.is_finite() {
            log::error!("loss became non-finite at iteration {k}: {loss_value}");
            divergence = Some(Divergence { k, loss: loss_value });
            stop = StopReason::Diverged;
            break;
        }
        if k == 0 && config.record_patterns {
            patterns0 = Some(initial_patterns(&trace, depth));
        }
        let ms = margins(&trace.outputs, data);
        if let (Some(prev), Some(row)) = (prev_outputs.as_ref(), rows.last_mut()) {
            let deltas: Vec<f64> = (0..n)
                .map(|i| data.label(i) * (trace.outputs[i] - prev[i]))
                .collect();
            row.delta_max_abs = Some(deltas.iter().map(|d| d.abs()).fold(0.0, f64::max));
            row.delta_min = Some(deltas.iter().copied().fold(f64::INFINITY, f64::min));
            row.delta_mean = Some(deltas.iter().sum::<f64>() / n as f64);
        }
        let misclassified = count_errors(&trace.outputs, data);
        let stopping = if loss_value <= config.target_loss {
            Some(StopReason::TargetLoss)
        } else if config.stop_on_zero_error && misclassified == 0 {
            Some(StopReason::ZeroError)
        } else if k == config.max_iters {
            Some(StopReason::MaxIters)
        } else {
            None
        };

        let batch = if stopping.is_some() { all.clone() } else { sampler.next_batch() };
        let coeffs = loss_coefficients(&trace.outputs, data, loss, &batch, batch.len() as f64);
        let grads = weighted_output_gradient(&params, &trace, &batch, &coeffs)?;
        let sum_loss_deriv: f64 = ms.iter().map(|&m| loss.deriv(m)).sum();
        let batch_mean_loss_deriv = batch.iter().map(|&i| loss.deriv(ms[i])).sum::<f64>() / batch.len() as f64;

        let norm_row = stopping.is_some() || k % config.norm_every == 0;
        let (radius, grad_spectral) = if norm_row {
            let mut radius = Vec::with_capacity(depth);
            for (l, norm) in radius_norms.iter_mut().enumerate() {
                let diff = params.weights()[l].sub(&params0.weights()[l])?;
                let r = norm.norm(&diff);
                if r > config.tau {
                    if !warned_layers[l] {
                        log::warn!(
                            "iteration {k}: layer {} left the perturbation region (radius {r:.4e} > tau {:.4e})",
                            l + 1,
                            config.tau
                        );
                        warned_layers[l] = true;
                    }
                    warnings.push(RadiusWarning {
                        k,
                        layer: l + 1,
                        radius: r,
                        tau: config.tau,
                    });
                }
                radius.push(r);
            }
            let spec = grad_norms
                .iter_mut()
                .zip(&grads.layers)
                .map(|(norm, g)| norm.norm(g))
                .collect();
            (Some(radius), Some(spec))
        } else {
            (None, None)
        };

        let snapshot_row = stopping.is_some() || snapshots.binary_search(&k).is_ok();
        let (pattern_drift_v, ratio) = if snapshot_row {
            let drift = match &patterns0 {
                Some(p0) => Some(pattern_drift(&trace, p0)?),
                None => None,
            };
            let last_frob = if batch.len() == n {
                frobenius_norm(grads.layers.last().unwrap())
            } else {
                let full = full_gradient(&params, &trace, data, loss, &all)?;
                frobenius_norm(full.layers.last().unwrap())
            };
            (
                drift,
                Some(gradient_ratio(last_frob, n, last_width, data.phi(), sum_loss_deriv)),
            )
        } else {
            (None, None)
        };

        rows.push(TrajectoryRow {
            k,
            loss: loss_value,
            misclassified,
            min_margin: ms.iter().copied().fold(f64::INFINITY, f64::min),
            max_margin: ms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            sum_loss_deriv,
            batch_mean_loss_deriv,
            radius,
            grad_spectral,
            grad_frobenius: grads.layers.iter().map(frobenius_norm).collect(),
            pattern_drift: pattern_drift_v,
            gradient_ratio: ratio,
            delta_max_abs: None,
            delta_min: None,
            delta_mean: None,
        });

        if let Some(reason) = stopping {
            stop = reason;
            break;
        }
        params.apply_step(config.eta, &grads)?;
        prev_outputs = Some(trace.outputs);
    }

    let record = TrajectoryRecord {
        rows,
        stop_reason: stop,
        warnings,
        divergence,
        eta: config.eta,
        batch_size,
        n,
        depth,
        max_width: params0.max_width(),
        last_width,
        phi: data.phi(),
    };
    Ok((params, record))
}

fn full_gradient(
    params: &NetworkParams,
    trace: &BatchTrace,
    data: &Dataset,
    loss: &LossSpec,
    all: &[usize],
) -> Result<LayerGradients> {
    let coeffs = loss_coefficients(&trace.outputs, data, loss, all, data.n() as f64);
    weighted_output_gradient(params, trace, all, &coeffs)
}

/// Per-step ratio `max_i |Delta_i^(k)| / (eta L^4 M |mean l'|)`, where the
/// mean runs over the examples used in step `k`.
pub fn output_change_ratios(record: &TrajectoryRecord) -> Vec<f64> {
    let scale = record.eta * (record.depth as f64).powi(4) * record.max_width as f64;
    record
        .rows
        .iter()
        .filter_map(|r| {
            let d = r.delta_max_abs?;
            let denom = scale * r.batch_mean_loss_deriv.abs();
            (denom > 0.0).then(|| d / denom)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputChangeCheck {
    pub steps: usize,
    pub median_ratio: f64,
    pub max_ratio: f64,
    pub multiple: f64,
    pub pass: bool,
}

/// The per-step output change is bounded by a run constant times
/// `eta L^4 M |mean l'|`: checks that no step's ratio exceeds `multiple`
/// times the run median.
pub fn check_output_change_bound(record: &TrajectoryRecord, multiple: f64) -> OutputChangeCheck {
    let mut ratios = output_change_ratios(record);
    if ratios.is_empty() {
        return OutputChangeCheck {
            steps: 0,
            median_ratio: 0.0,
            max_ratio: 0.0,
            multiple,
            pass: true,
        };
    }
    ratios.sort_by(f64::total_cmp);
    let median = ratios[ratios.len() / 2];
    let max = *ratios.last().unwrap();
    OutputChangeCheck {
        steps: ratios.len(),
        median_ratio: median,
        max_ratio: max,
        multiple,
        pass: max <= multiple * median,
    }
}

/// Fraction of consecutive rows where the loss did not increase.
pub fn monotone_fraction(record: &TrajectoryRecord) -> f64 {
    let steps = record.rows.len().saturating_sub(1);
    if steps == 0 {
        return 1.0;
    }
    let ok = record.rows.windows(2).filter(|w| w[1].loss <= w[0].loss).count();
    ok as f64 / steps as f64
}
