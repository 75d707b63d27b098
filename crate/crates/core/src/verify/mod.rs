//! Empirical checks of the structural properties that a Gaussian-initialized
//! ReLU network and its small perturbations enjoy, plus closed-form and
//! brute-force oracles for the scalar identities used along the way.
//!
//! Bounds that involve unnamed absolute constants are not asserted. Their
//! fitted constants are reported, and a check passes when the constant is
//! finite and stable across trials.

mod chain;
mod init;
mod oracles;
mod perturbation;

use serde::{Deserialize, Serialize};

pub use chain::{top_s_norm, ChainOperator};
pub use init::{verify_init_properties, verify_init_trials, InitOptions};
pub use oracles::{
    concavity_inequality_check, fit_kernel_cubic_constant, lemma_oracles, mc_relu_kernel,
    relu_kernel_closed_form, subset_mean_variance, KernelEstimate, LemmaOracleReport, SubsetVariance,
};
pub use perturbation::{verify_perturbation_properties, PerturbationOptions};

/// How `measured` is compared against `bound`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    /// Pass iff `measured <= bound`.
    AtMost,
    /// Pass iff `measured >= bound`.
    AtLeast,
    /// Pass iff the fitted constant is finite, exceeds `bound` when one is
    /// given, and is stable across trials.
    Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyEntry {
    /// Stable key, e.g. `init_i_norm_deviation`.
    pub name: String,
    /// Item label of the property, e.g. `init (iv)`.
    pub item: String,
    pub measured: f64,
    /// Per-layer or per-trial values behind `measured`.
    pub values: Vec<f64>,
    /// Threshold compared against; absent for reported constants.
    pub bound: Option<f64>,
    pub bound_expr: String,
    /// `measured` divided by the scaling of the bound.
    pub constant: f64,
    pub check: Check,
    pub pass: bool,
    pub trials: usize,
    pub failure_fraction: f64,
    /// `max / min` of the constant across trials; 1 for a single trial.
    pub spread: f64,
}

impl PropertyEntry {
    pub(crate) fn new(
        name: &str,
        item: &str,
        measured: f64,
        bound: Option<f64>,
        bound_expr: impl Into<String>,
        constant: f64,
        check: Check,
    ) -> Self {
        let pass = match check {
            Check::AtMost => bound.is_some_and(|b| measured <= b),
            Check::AtLeast => bound.is_some_and(|b| measured >= b),
            Check::Report => constant.is_finite() && bound.map_or(true, |b| constant > b),
        };
        Self {
            name: name.to_string(),
            item: item.to_string(),
            measured,
            values: Vec::new(),
            bound,
            bound_expr: bound_expr.into(),
            constant,
            check,
            pass,
            trials: 1,
            failure_fraction: if pass { 0.0 } else { 1.0 },
            spread: 1.0,
        }
    }

    pub(crate) fn with_values(mut self, values: Vec<f64>) -> Self {
        self.values = values;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub entries: Vec<PropertyEntry>,
    /// Report-level notes such as a perturbation larger than the declared
    /// radius.
    pub flags: Vec<String>,
    pub pass: bool,
}

impl PropertyReport {
    pub(crate) fn from_entries(entries: Vec<PropertyEntry>, flags: Vec<String>) -> Self {
        let pass = entries.iter().all(|e| e.pass);
        Self { entries, flags, pass }
    }

    pub fn entry(&self, name: &str) -> Option<&PropertyEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn failed(&self) -> Vec<&PropertyEntry> {
        self.entries.iter().filter(|e| !e.pass).collect()
    }

    /// Folds per-trial reports into one. The aggregated `measured` is the
    /// worst trial; an entry passes when at most `allowed_failures` trials
    /// failed it and, for reported constants, when their spread across trials
    /// is at most `stability_ratio`.
    pub fn aggregate(reports: &[PropertyReport], allowed_failures: usize, stability_ratio: f64) -> PropertyReport {
        let Some(first) = reports.first() else {
            return PropertyReport::from_entries(Vec::new(), Vec::new());
        };
        let trials = reports.len();
        let mut entries = Vec::with_capacity(first.entries.len());
        for template in &first.entries {
            let all: Vec<&PropertyEntry> = reports.iter().filter_map(|r| r.entry(&template.name)).collect();
            let measured_values: Vec<f64> = all.iter().map(|e| e.measured).collect();
            let constants: Vec<f64> = all.iter().map(|e| e.constant).collect();
            let failures = all.iter().filter(|e| !e.pass).count() + (trials - all.len());
            let worst = match template.check {
                Check::AtLeast => measured_values.iter().copied().fold(f64::INFINITY, f64::min),
                _ => measured_values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            let cmax = constants.iter().map(|c| c.abs()).fold(0.0, f64::max);
            let cmin = constants.iter().map(|c| c.abs()).fold(f64::INFINITY, f64::min);
            let spread = if cmax == 0.0 { 1.0 } else { cmax / cmin };
            let stable = template.check != Check::Report || spread <= stability_ratio;
            let worst_constant = match template.check {
                Check::AtLeast => constants.iter().copied().fold(f64::INFINITY, f64::min),
                _ => constants.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            entries.push(PropertyEntry {
                name: template.name.clone(),
                item: template.item.clone(),
                measured: worst,
                values: measured_values,
                bound: template.bound,
                bound_expr: template.bound_expr.clone(),
                constant: worst_constant,
                check: template.check,
                pass: failures <= allowed_failures && stable,
                trials,
                failure_fraction: failures as f64 / trials as f64,
                spread,
            });
        }
        let mut flags: Vec<String> = reports.iter().flat_map(|r| r.flags.iter().cloned()).collect();
        flags.sort();
        flags.dedup();
        PropertyReport::from_entries(entries, flags)
    }
}

/// `L^{4/3} tau^{2/3}`, the common scale of the pattern-change bounds.
pub(crate) fn pattern_scale(depth: usize, tau: f64) -> f64 {
    (depth as f64).powf(4.0 / 3.0) * tau.powf(2.0 / 3.0)
}

/// `a / b`, with `0 / 0 = 0`.
pub(crate) fn ratio(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a / b
    }
}
