use std::f64::consts::PI;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::uniform_grid;
use crate::rng::{Rng, Stream};

/// `E[relu(Z1) relu(Z2)]` for standard Gaussians with correlation `rho`:
/// `(sqrt(1 - rho^2) + rho (pi - arccos rho)) / (2 pi)`.
pub fn relu_kernel_closed_form(rho: f64) -> Result<f64> {
    if !(rho.abs() <= 1.0) {
        return Err(Error::invalid(format!("correlation must lie in [-1, 1], got {rho}")));
    }
    Ok(((1.0 - rho * rho).max(0.0).sqrt() + rho * (PI - rho.acos())) / (2.0 * PI))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Monte-Carlo estimate of [`relu_kernel_closed_form`] with
/// `Z2 = rho Z1 + sqrt(1 - rho^2) G`.
pub fn mc_relu_kernel(rho: f64, samples: usize, seed: u64) -> Result<KernelEstimate> {
    if !(rho.abs() <= 1.0) {
        return Err(Error::invalid(format!("correlation must lie in [-1, 1], got {rho}")));
    }
    if samples < 1000 {
        return Err(Error::invalid(format!("at least 1000 samples are required, got {samples}")));
    }
    let mut rng = Rng::with_stream(seed, Stream::MonteCarlo);
    let c = (1.0 - rho * rho).max(0.0).sqrt();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let z1 = rng.gaussian();
        let z2 = rho * z1 + c * rng.gaussian();
        let v = z1.max(0.0) * z2.max(0.0);
        sum += v;
        sum_sq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(KernelEstimate {
        estimate: mean,
        std_error: (var / n).sqrt(),
        samples,
    })
}

/// Smallest `C` with `k(1 - theta^2/2) <= 1/2 - theta^2/4 + C theta^3` over
/// the given angles.
pub fn fit_kernel_cubic_constant(thetas: &[f64]) -> Result<f64> {
    let mut c = f64::NEG_INFINITY;
    for &t in thetas {
        if !(t > 0.0 && t <= 2.0) {
            return Err(Error::invalid(format!("theta must lie in (0, 2], got {t}")));
        }
        let k = relu_kernel_closed_form(1.0 - t * t / 2.0)?;
        c = c.max((k - 0.5 + t * t / 4.0) / t.powi(3));
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetVariance {
    /// Mean over all `C(n, B)` subsets of the squared subset mean.
    pub exact: f64,
    /// `(n - B) / (B (n - 1)) * mean(u_i^2)`.
    pub formula: f64,
    pub subsets: usize,
}

pub const SUBSET_ENUMERATION_LIMIT: usize = 20;

/// Variance of the mean of a uniformly random size-`b` subset of a
/// zero-sum vector, by enumeration and by the closed form.
pub fn subset_mean_variance(u: &[f64], b: usize) -> Result<SubsetVariance> {
    let n = u.len();
    if n == 0 || n > SUBSET_ENUMERATION_LIMIT {
        return Err(Error::invalid(format!(
            "vector length must be in 1..={SUBSET_ENUMERATION_LIMIT}, got {n}"
        )));
    }
    if b == 0 || b > n {
        return Err(Error::invalid(format!("subset size must be in 1..={n}, got {b}")));
    }
    let total: f64 = u.iter().sum();
    if total.abs() > 1e-12 {
        return Err(Error::invalid(format!("entries must sum to zero, got {total:e}")));
    }
    let mut acc = 0.0;
    let mut subsets = 0usize;
    for combo in (0..n).combinations(b) {
        let mean = combo.iter().map(|&i| u[i]).sum::<f64>() / b as f64;
        acc += mean * mean;
        subsets += 1;
    }
    let second = u.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let formula = if n == 1 {
        0.0
    } else {
        (n - b) as f64 / (b * (n - 1)) as f64 * second
    };
    Ok(SubsetVariance {
        exact: acc / subsets as f64,
        formula,
        subsets,
    })
}

pub const CONCAVITY_SLACK: f64 = 1e-12;

/// Whether `(a - b) / b^{2p} >= (a^{1-2p} - b^{1-2p}) / (1 - 2p)` holds up to
/// a relative slack of [`CONCAVITY_SLACK`].
pub fn concavity_inequality_check(a: f64, b: f64, p: f64) -> Result<bool> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::invalid(format!("a and b must be positive, got a = {a}, b = {b}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("p must lie in [0, 1], got {p}")));
    }
    if p == 0.5 {
        return Err(Error::invalid("p = 1/2 is excluded"));
    }
    let lhs = (a - b) / b.powf(2.0 * p);
    let eps = 1.0 - 2.0 * p;
    // b^eps * ((a/b)^eps - 1) / eps without cancellation near a = b
    let rhs = b.powf(eps) * (eps * (a / b).ln()).exp_m1() / eps;
    let scale = lhs.abs().max(rhs.abs()).max(1.0);
    Ok(lhs >= rhs - CONCAVITY_SLACK * scale)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelPoint {
    pub rho: f64,
    pub closed_form: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub z_score: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaOracleReport {
    pub kernel_points: Vec<KernelPoint>,
    /// `min_rho (k(rho) - rho/2)` over a uniform grid on `[-1, 1]`.
    pub kernel_lower_margin: f64,
    pub kernel_lower_pass: bool,
    /// Fitted `C` of the cubic upper bound for `theta <= 1/2`.
    pub kernel_cubic_constant: f64,
    pub kernel_cubic_pass: bool,
    /// Worst `|exact - formula|` over the subset-variance cases.
    pub subset_variance_max_error: f64,
    pub subset_variance_cases: usize,
    pub subset_variance_equal: bool,
    pub concavity_trials: usize,
    pub concavity_violations: usize,
    pub pass: bool,
}

/// Runs every scalar oracle at its standard settings.
pub fn lemma_oracles(seed: u64) -> Result<LemmaOracleReport> {
    let mut kernel_points = Vec::new();
    for (k, &rho) in [-0.5, 0.0, 0.5, 0.9, 1.0].iter().enumerate() {
        let closed = relu_kernel_closed_form(rho)?;
        let est = mc_relu_kernel(rho, 100_000, seed.wrapping_add(k as u64))?;
        let z = (est.estimate - closed).abs() / est.std_error;
        kernel_points.push(KernelPoint {
            rho,
            closed_form: closed,
            estimate: est.estimate,
            std_error: est.std_error,
            z_score: z,
            pass: z <= 4.0,
        });
    }
    let kernel_lower_margin = uniform_grid(-1.0, 1.0, 1001)
        .into_iter()
        .map(|r| relu_kernel_closed_form(r).map(|k| k - r / 2.0))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let thetas: Vec<f64> = (1..=500).map(|i| i as f64 / 1000.0).collect();
    let kernel_cubic_constant = fit_kernel_cubic_constant(&thetas)?;

    let mut rng = Rng::with_stream(seed, Stream::MonteCarlo);
    rng.set_word_pos(1 << 40);
    let mut max_err = 0.0f64;
    let mut cases = 0usize;
    let worked = subset_mean_variance(&[1.0, -1.0, 2.0, -2.0], 2)?;
    max_err = max_err.max((worked.exact - 5.0 / 6.0).abs()).max((worked.formula - 5.0 / 6.0).abs());
    for n in 2..=8 {
        for _ in 0..20 {
            let mut u = rng.gaussian_vec(n);
            let mean = u.iter().sum::<f64>() / n as f64;
            u.iter_mut().for_each(|x| *x -= mean);
            let drift: f64 = u.iter().sum();
            u[n - 1] -= drift;
            for b in 1..=n {
                let r = subset_mean_variance(&u, b)?;
                max_err = max_err.max((r.exact - r.formula).abs());
                cases += 1;
            }
        }
    }

    let concavity_trials = 10_000;
    let mut violations = 0;
    for _ in 0..concavity_trials {
        let a = 10f64.powf(rng.uniform() * 6.0 - 3.0);
        let b = 10f64.powf(rng.uniform() * 6.0 - 3.0);
        let mut p = rng.uniform();
        if p == 0.5 {
            p = 0.25;
        }
        if !concavity_inequality_check(a, b, p)? {
            violations += 1;
        }
    }

    let kernel_lower_pass = kernel_lower_margin >= -1e-15;
    let kernel_cubic_pass = kernel_cubic_constant <= 0.2;
    let subset_variance_equal = max_err <= 1e-12;
    let pass = kernel_points.iter().all(|k| k.pass)
        && kernel_lower_pass
        && kernel_cubic_pass
        && subset_variance_equal
        && violations == 0;
    Ok(LemmaOracleReport {
        kernel_points,
        kernel_lower_margin,
        kernel_lower_pass,
        kernel_cubic_constant,
        kernel_cubic_pass,
        subset_variance_max_error: max_err,
        subset_variance_cases: cases,
        subset_variance_equal,
        concavity_trials,
        concavity_violations: violations,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kernel_endpoints() {
        assert_relative_eq!(relu_kernel_closed_form(1.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(relu_kernel_closed_form(0.0).unwrap(), 1.0 / (2.0 * PI), epsilon = 1e-15);
        assert_eq!(relu_kernel_closed_form(-1.0).unwrap(), 0.0);
        assert!(relu_kernel_closed_form(1.0 + 1e-9).is_err());
        assert!(relu_kernel_closed_form(f64::NAN).is_err());
    }

    #[test]
    fn kernel_near_one() {
        let theta: f64 = 0.02f64.sqrt();
        let rho = 1.0 - theta * theta / 2.0;
        assert_relative_eq!(rho, 0.99, epsilon = 1e-15);
        let k = relu_kernel_closed_form(rho).unwrap();
        assert!(k >= rho / 2.0);
        assert!(k <= 0.5 - theta * theta / 4.0 + 0.2 * theta.powi(3));
    }

    #[test]
    fn cubic_constant_is_below_a_fifth() {
        let c = fit_kernel_cubic_constant(&[0.01, 0.1, 0.3, 0.5]).unwrap();
        assert!(c > 0.0 && c <= 0.2, "{c}");
        assert!(fit_kernel_cubic_constant(&[0.0]).is_err());
    }

    #[test]
    fn monte_carlo_matches() {
        for (k, rho) in [1.0, 0.0, -0.5].into_iter().enumerate() {
            let est = mc_relu_kernel(rho, 100_000, k as u64).unwrap();
            let closed = relu_kernel_closed_form(rho).unwrap();
            assert!((est.estimate - closed).abs() <= 4.0 * est.std_error, "rho {rho}: {est:?} vs {closed}");
        }
        assert!(mc_relu_kernel(0.0, 10, 0).is_err());
    }

    #[test]
    fn subset_variance_worked_case() {
        let r = subset_mean_variance(&[1.0, -1.0, 2.0, -2.0], 2).unwrap();
        assert_eq!(r.subsets, 6);
        assert_relative_eq!(r.exact, 5.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(r.formula, 5.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn subset_variance_edges() {
        let u = [3.0, -1.0, -2.0];
        let full = subset_mean_variance(&u, 3).unwrap();
        assert_eq!(full.formula, 0.0);
        assert!(full.exact.abs() < 1e-30);
        let one = subset_mean_variance(&u, 1).unwrap();
        assert_relative_eq!(one.exact, 14.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(one.formula, 14.0 / 3.0, epsilon = 1e-14);
        assert!(subset_mean_variance(&[1.0, 1.0], 1).is_err());
        assert!(subset_mean_variance(&u, 0).is_err());
        assert!(subset_mean_variance(&u, 4).is_err());
    }

    #[test]
    fn concavity_examples() {
        assert!(concavity_inequality_check(3.0, 2.0, 0.0).unwrap());
        assert!(concavity_inequality_check(4.0, 1.0, 1.0).unwrap());
        assert!(concavity_inequality_check(2.5, 2.5, 0.3).unwrap());
        assert!(concavity_inequality_check(1.0, 1.0, 0.5).is_err());
        assert!(concavity_inequality_check(0.0, 1.0, 0.2).is_err());
        assert!(concavity_inequality_check(1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn concavity_reverse_fails_when_flipped() {
        // Swapping the roles of the two sides must violate the inequality
        // somewhere, otherwise the check would be vacuous.
        let a: f64 = 4.0;
        let b: f64 = 1.0;
        let p: f64 = 1.0;
        let lhs = (a - b) / b.powf(2.0 * p);
        let rhs = (a.powf(1.0 - 2.0 * p) - b.powf(1.0 - 2.0 * p)) / (1.0 - 2.0 * p);
        assert_relative_eq!(lhs, 3.0);
        assert_relative_eq!(rhs, 0.75);
    }

    #[test]
    fn oracle_report_passes() {
        let r = lemma_oracles(7).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.concavity_violations, 0);
        assert!(r.subset_variance_equal);
    }
}
