//! Margin losses `l(y * y_hat)` for binary classification.
//!
//! Every loss carries the constants that parameterize the assumptions the
//! convergence analysis places on it:
//!
//! * monotone with vanishing tail: `l' <= 0`, `l(x), l'(x) -> 0` as `x -> inf`;
//! * derivative lower bound: `-l'(x) >= min(alpha0, alpha1 * l(x)^p)`;
//! * smoothness: `|l''(x)| <= lambda`;
//! * two-sided derivative bound:
//!   `min(alpha0, alpha1 l^p) <= |l'| <= min(rho0, rho1 l^p)`.
//!
//! Hinge loss is not offered: it is not smooth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConstants {
    pub p: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub rho0: f64,
    pub rho1: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LossSpec {
    pub name: &'static str,
    pub eval: fn(f64) -> f64,
    pub deriv: fn(f64) -> f64,
    pub second_deriv: fn(f64) -> f64,
    pub constants: LossConstants,
}

impl LossSpec {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        (self.deriv)(x)
    }

    #[inline]
    pub fn second_deriv(&self, x: f64) -> f64 {
        (self.second_deriv)(x)
    }
}

/// `log(1 + e^{-x})`, stable for both signs.
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// `-1 / (1 + e^x)`.
fn logistic_deriv(x: f64) -> f64 {
    if x >= 0.0 {
        let e = (-x).exp();
        -e / (1.0 + e)
    } else {
        -1.0 / (1.0 + x.exp())
    }
}

/// `e^x / (1 + e^x)^2`.
fn logistic_second(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

fn exponential(x: f64) -> f64 {
    (-x).exp()
}

fn exponential_deriv(x: f64) -> f64 {
    -(-x).exp()
}

fn exponential_second(x: f64) -> f64 {
    (-x).exp()
}

pub const LOGISTIC: LossSpec = LossSpec {
    name: "logistic",
    eval: logistic,
    deriv: logistic_deriv,
    second_deriv: logistic_second,
    // -l'(x) = 1/(1+e^x) >= 1/2 for x <= 0. For x >= 0 the ratio -l'/l rises
    // from 1/(2 ln 2) ~ 0.72 towards 1, so alpha1 = 1/2 holds there.
    // Upper side: t/(1+t) <= ln(1+t) with t = e^{-x}.
    constants: LossConstants {
        p: 1.0,
        alpha0: 0.5,
        alpha1: 0.5,
        rho0: 1.0,
        rho1: 1.0,
        lambda: 0.25,
    },
};

/// `l'' = e^{-x}` is unbounded as `x -> -inf`; lambda is declared infinite and
/// the effective smoothness along a run is read off the logged margin range.
pub const EXPONENTIAL: LossSpec = LossSpec {
    name: "exponential",
    eval: exponential,
    deriv: exponential_deriv,
    second_deriv: exponential_second,
    constants: LossConstants {
        p: 1.0,
        alpha0: f64::INFINITY,
        alpha1: 1.0,
        rho0: f64::INFINITY,
        rho1: 1.0,
        lambda: f64::INFINITY,
    },
};

pub fn builtin_loss(name: &str) -> Result<LossSpec> {
    match name.to_ascii_lowercase().as_str() {
        "logistic" | "cross-entropy" | "cross_entropy" => Ok(LOGISTIC),
        "exponential" | "exp" => Ok(EXPONENTIAL),
        _ => Err(Error::UnknownLoss(name.to_string())),
    }
}

/// 2001 points uniform on `[-20, 20]`.
pub fn default_grid() -> Vec<f64> {
    uniform_grid(-20.0, 20.0, 2001)
}

pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2);
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

/// Worst-case margin of one inequality family over the grid. Negative means
/// violated at `worst_x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub margin: f64,
    pub worst_x: f64,
}

impl Margin {
    fn track(&mut self, x: f64, margin: f64) {
        if margin < self.margin || self.margin.is_nan() {
            self.margin = margin;
            self.worst_x = x;
        }
    }

    fn start() -> Self {
        Margin {
            margin: f64::INFINITY,
            worst_x: f64::NAN,
        }
    }

    pub fn passes(&self) -> bool {
        self.margin >= -ASSUMPTION_SLACK
    }
}

pub const ASSUMPTION_SLACK: f64 = 1e-12;
/// Point at which the tail limits are probed.
pub const TAIL_PROBE: f64 = 50.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub loss: String,
    pub constants: LossConstants,
    /// `-l'(x) >= 0`.
    pub monotone: Margin,
    /// `-max(|l(T)|, |l'(T)|)` at `T = TAIL_PROBE`.
    pub tail: Margin,
    /// `-l'(x) - min(alpha0, alpha1 l^p)`.
    pub derivative_lower: Margin,
    /// `lambda - |l''(x)|`.
    pub smoothness: Margin,
    /// `min(rho0, rho1 l^p) - |l'(x)|`.
    pub derivative_upper: Margin,
    /// `rho0 / alpha0`; `1` when both are infinite.
    pub rho0_over_alpha0: f64,
    pub pass: bool,
}

fn min_bound(c0: f64, c1: f64, loss: f64, p: f64) -> f64 {
    c0.min(c1 * loss.powf(p))
}

pub fn check_loss_assumptions(loss: &LossSpec, grid: &[f64]) -> AssumptionReport {
    let c = loss.constants;
    let mut monotone = Margin::start();
    let mut lower = Margin::start();
    let mut smooth = Margin::start();
    let mut upper = Margin::start();
    for &x in grid {
        let l = loss.eval(x);
        let d = loss.deriv(x);
        let dd = loss.second_deriv(x);
        monotone.track(x, -d);
        lower.track(x, -d - min_bound(c.alpha0, c.alpha1, l, c.p));
        smooth.track(x, c.lambda - dd.abs());
        upper.track(x, min_bound(c.rho0, c.rho1, l, c.p) - d.abs());
    }
    let tail_value = loss.eval(TAIL_PROBE).abs().max(loss.deriv(TAIL_PROBE).abs());
    let tail = Margin {
        margin: -tail_value,
        worst_x: TAIL_PROBE,
    };
    let rho0_over_alpha0 = if c.alpha0.is_infinite() && c.rho0.is_infinite() {
        1.0
    } else {
        c.rho0 / c.alpha0
    };
    let pass = [monotone, tail, lower, smooth, upper]
        .iter()
        .all(Margin::passes)
        && !grid.is_empty();
    AssumptionReport {
        loss: loss.name.to_string(),
        constants: c,
        monotone,
        tail,
        derivative_lower: lower,
        smoothness: smooth,
        derivative_upper: upper,
        rho0_over_alpha0,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn logistic_at_zero() {
        let l = builtin_loss("logistic").unwrap();
        assert_relative_eq!(l.eval(0.0), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_relative_eq!(l.deriv(0.0), -0.5, epsilon = 1e-15);
        assert_relative_eq!(l.second_deriv(0.0), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn exponential_derivative_identity() {
        let l = builtin_loss("exponential").unwrap();
        for x in uniform_grid(-10.0, 10.0, 101) {
            assert_eq!(-l.deriv(x), l.eval(x));
        }
    }

    #[test]
    fn logistic_curvature_peaks_at_zero() {
        let l = LOGISTIC;
        let grid = default_grid();
        let (argmax, max) = grid
            .iter()
            .map(|&x| (x, l.second_deriv(x)))
            .fold((f64::NAN, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        assert_eq!(argmax, 0.0);
        assert_relative_eq!(max, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(builtin_loss("hinge"), Err(Error::UnknownLoss(_))));
    }

    #[test]
    fn exponential_passes_with_zero_margin_on_p_bounds() {
        let r = check_loss_assumptions(&EXPONENTIAL, &uniform_grid(-5.0, 5.0, 101));
        assert!(r.pass, "{r:?}");
        assert_eq!(r.derivative_lower.margin, 0.0);
        assert_eq!(r.derivative_upper.margin, 0.0);
    }

    #[test]
    fn logistic_passes_on_default_grid() {
        let r = check_loss_assumptions(&LOGISTIC, &default_grid());
        assert!(r.pass, "{r:?}");
        assert_eq!(r.rho0_over_alpha0, 2.0);
    }

    #[test]
    fn logistic_with_alpha0_one_fails() {
        // -l' < 1 everywhere, and near x = -1.8 also below l/2.
        let mut spec = LOGISTIC;
        spec.constants.alpha0 = 1.0;
        let r = check_loss_assumptions(&spec, &default_grid());
        assert!(!r.derivative_lower.passes());
        assert!(!r.pass);
    }

    #[test]
    fn broken_smoothness_is_flagged_at_peak() {
        let mut spec = LOGISTIC;
        spec.constants.lambda = 0.2;
        let r = check_loss_assumptions(&spec, &default_grid());
        assert!(!r.pass);
        assert_eq!(r.smoothness.worst_x, 0.0);
        assert_relative_eq!(r.smoothness.margin, -0.05, epsilon = 1e-15);
    }

    fn check_finite_differences(spec: &LossSpec) {
        let h = 1e-5;
        for x in uniform_grid(-10.0, 10.0, 401) {
            let fd = (spec.eval(x + h) - spec.eval(x - h)) / (2.0 * h);
            let d = spec.deriv(x);
            assert!((fd - d).abs() <= 1e-6 * d.abs().max(1e-3), "{} d at {x}: {fd} vs {d}", spec.name);
            let fd2 = (spec.deriv(x + h) - spec.deriv(x - h)) / (2.0 * h);
            let dd = spec.second_deriv(x);
            assert!((fd2 - dd).abs() <= 1e-6 * dd.abs().max(1e-3), "{} dd at {x}: {fd2} vs {dd}", spec.name);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        check_finite_differences(&LOGISTIC);
        check_finite_differences(&EXPONENTIAL);
    }

    #[test]
    fn strictly_decreasing_where_derivative_negative() {
        for spec in [LOGISTIC, EXPONENTIAL] {
            let g = uniform_grid(-20.0, 20.0, 2001);
            for w in g.windows(2) {
                if spec.deriv(w[0]) < 0.0 {
                    assert!(spec.eval(w[1]) < spec.eval(w[0]), "{} at {}", spec.name, w[0]);
                }
            }
        }
    }
}
