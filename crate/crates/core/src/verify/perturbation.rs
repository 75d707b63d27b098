use serde::{Deserialize, Serialize};

use super::chain::top_s_norm;
use super::init::{chain_steps, operator_norm};
use super::{pattern_scale, ratio, Check, PropertyEntry, PropertyReport};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, pattern_diff_count, spectral_norm_default, LinearOperator};
use crate::losses::LossSpec;
use crate::network::{forward_dataset, loss_coefficients, margins, weighted_output_gradient, NetworkParams};
use crate::optim::{gradient_ratio, perturbation_radius};
use crate::rng::{Rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationOptions {
    /// Declared perturbation radius. `None` uses the measured radius.
    pub tau: Option<f64>,
    /// Minibatch size for the stochastic-gradient bound.
    pub batch_size: usize,
    /// Random minibatches drawn for the stochastic-gradient bound.
    pub batches: usize,
    /// Examples (from index 0) used by the chain-product items.
    pub examples: Option<usize>,
    pub products: bool,
    pub product_tol: f64,
    pub seed: u64,
}

impl Default for PerturbationOptions {
    fn default() -> Self {
        Self {
            tau: None,
            batch_size: 5,
            batches: 8,
            examples: None,
            products: true,
            product_tol: 1e-8,
            seed: 0,
        }
    }
}

fn check_dims(a: &NetworkParams, b: &NetworkParams, what: &str) -> Result<()> {
    if a.layer_dims() != b.layer_dims() || a.output_vector() != b.output_vector() {
        return Err(Error::invalid(format!("{what} does not match the initial network's shape")));
    }
    Ok(())
}

/// Checks the properties of two networks `tilde` and `hat` inside a
/// spectral-norm ball around the initialization `params0`: bounded weights,
/// Lipschitz hidden outputs, few pattern changes, bounded chain products, and
/// matching lower and upper bounds on the gradient.
pub fn verify_perturbation_properties(
    params0: &NetworkParams,
    tilde: &NetworkParams,
    hat: &NetworkParams,
    data: &Dataset,
    loss: &LossSpec,
    opts: &PerturbationOptions,
) -> Result<PropertyReport> {
    check_dims(params0, tilde, "perturbed network")?;
    check_dims(params0, hat, "second perturbed network")?;
    let depth = params0.depth();
    let dl = depth as f64;
    let n = data.n();
    let big_m = params0.max_width() as f64;
    let m_last = *params0.layer_dims().last().unwrap();
    let mut flags = Vec::new();
    let mut entries = Vec::new();

    let r_tilde = perturbation_radius(tilde, params0)?;
    let r_hat = perturbation_radius(hat, params0)?;
    let measured_tau = r_tilde.iter().chain(&r_hat).copied().fold(0.0, f64::max);
    let tau = opts.tau.unwrap_or(measured_tau);
    if let Some(declared) = opts.tau {
        if measured_tau > declared {
            flags.push(format!(
                "perturbation radius {measured_tau:.6e} exceeds the declared tau {declared:.6e}"
            ));
        }
    }
    entries.push(
        PropertyEntry::new(
            "perturbation_radius",
            "radius",
            measured_tau,
            Some(tau),
            "tau",
            ratio(measured_tau, tau),
            Check::AtMost,
        )
        .with_values(r_tilde.iter().chain(&r_hat).copied().collect()),
    );

    // (i)
    let wn: Vec<f64> = tilde.weights().iter().map(spectral_norm_default).collect::<Result<_>>()?;
    let wmax = wn.iter().copied().fold(0.0, f64::max);
    entries.push(
        PropertyEntry::new("perturbation_i_weight_norm", "perturbation (i)", wmax, None, "C", wmax, Check::Report)
            .with_values(wn),
    );

    let t0 = forward_dataset(params0, data)?;
    let tt = forward_dataset(tilde, data)?;
    let th = forward_dataset(hat, data)?;

    // (ii)
    let diff_sum: f64 = hat
        .weights()
        .iter()
        .zip(tilde.weights())
        .map(|(a, b)| spectral_norm_default(&a.sub(b)?))
        .sum::<Result<f64>>()?;
    let mut drift = 0.0f64;
    for l in 1..=depth {
        for i in 0..n {
            let a = th.hidden_vec(l, i);
            let b = tt.hidden_vec(l, i);
            let d = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            drift = drift.max(d);
        }
    }
    let c_ii = ratio(drift, dl * diff_sum);
    entries.push(
        PropertyEntry::new(
            "perturbation_ii_hidden_drift",
            "perturbation (ii)",
            drift,
            None,
            "C L sum_r |W_hat_r - W_tilde_r|_2",
            c_ii,
            Check::Report,
        )
        .with_values(vec![dl * diff_sum]),
    );

    // (iii)
    let scale = pattern_scale(depth, tau);
    let mut flips = Vec::with_capacity(depth);
    let mut flip_ratio = 0.0f64;
    for l in 1..=depth {
        let m_l = params0.layer_dims()[l] as f64;
        let mut worst = 0usize;
        for i in 0..n {
            worst = worst.max(pattern_diff_count(&th.pattern(l, i), &tt.pattern(l, i))?);
        }
        flips.push(worst as f64);
        flip_ratio = flip_ratio.max(ratio(worst as f64, scale * m_l));
    }
    let fmax = flips.iter().copied().fold(0.0, f64::max);
    entries.push(
        PropertyEntry::new(
            "perturbation_iii_pattern_change",
            "perturbation (iii)",
            fmax,
            None,
            "C L^{4/3} tau^{2/3} m_l",
            flip_ratio,
            Check::Report,
        )
        .with_values(flips),
    );

    // (iv)
    let mut changed = 0usize;
    for j in 0..m_last {
        let any = (0..n).any(|i| {
            let a = tt.hidden[depth].get(j, i) > 0.0;
            let b = t0.hidden[depth].get(j, i) > 0.0;
            a != b
        });
        changed += any as usize;
    }
    entries.push(PropertyEntry::new(
        "perturbation_iv_changed_nodes",
        "perturbation (iv)",
        changed as f64,
        None,
        "C n L^{4/3} tau^{2/3} m_L",
        ratio(changed as f64, n as f64 * scale * m_last as f64),
        Check::Report,
    ));

    if opts.products {
        let examples = opts.examples.unwrap_or(n).min(n);
        // (v)
        let mut norms = Vec::new();
        for l1 in 1..depth {
            for l2 in (l1 + 1)..=depth {
                let mut worst = 0.0f64;
                for i in 0..examples {
                    let op = chain_steps(tilde, &tt, i, l1..=l2, None);
                    worst = worst.max(operator_norm(&op, opts.product_tol));
                }
                norms.push(worst);
            }
        }
        let vmax = norms.iter().copied().fold(0.0, f64::max);
        entries.push(
            PropertyEntry::new(
                "perturbation_v_product_norm",
                "perturbation (v)",
                vmax,
                None,
                "C L",
                vmax / dl,
                Check::Report,
            )
            .with_values(norms),
        );

        // (vi)
        if tau == 0.0 {
            flags.push("tau = 0: sparse output bound is degenerate and was skipped".to_string());
        }
        let mut sups = Vec::with_capacity(depth);
        for l in 1..=depth {
            let s = ((scale * params0.layer_dims()[l] as f64).ceil() as usize).max(1);
            let mut worst = 0.0f64;
            for i in 0..examples {
                let op = chain_steps(tilde, &tt, i, l..=depth, None);
                let u = op.apply_t(tilde.output_vector());
                worst = worst.max(top_s_norm(&u, s));
            }
            sups.push(worst);
        }
        let smax = sups.iter().copied().fold(0.0, f64::max);
        let denom = dl.powf(5.0 / 3.0) * tau.powf(1.0 / 3.0) * (big_m * big_m.ln().max(f64::MIN_POSITIVE)).sqrt();
        if tau > 0.0 {
            entries.push(
            PropertyEntry::new(
                "perturbation_vi_sparse_output",
                "perturbation (vi)",
                smax,
                None,
                "C L^{5/3} tau^{1/3} sqrt(M log M)",
                ratio(smax, denom),
                Check::Report,
            )
            .with_values(sups),
        );
        }
    }

    // (vii)
    let all: Vec<usize> = (0..n).collect();
    let coeffs = loss_coefficients(&tt.outputs, data, loss, &all, n as f64);
    let grads = weighted_output_gradient(tilde, &tt, &all, &coeffs)?;
    let ms = margins(&tt.outputs, data);
    let sum_deriv: f64 = ms.iter().map(|&m| loss.deriv(m)).sum();
    let r = gradient_ratio(
        frobenius_norm(grads.layers.last().unwrap()),
        n,
        m_last,
        data.phi(),
        sum_deriv,
    );
    entries.push(PropertyEntry::new(
        "perturbation_vii_gradient_lower",
        "perturbation (vii)",
        r,
        Some(0.0),
        "|grad_W_L|_F^2 >= C m_L phi / n^5 (sum l')^2",
        r,
        Check::Report,
    ));

    // (viii)
    let upper_scale = dl * dl * big_m.sqrt();
    let full: Vec<f64> = grads.layers.iter().map(spectral_norm_default).collect::<Result<_>>()?;
    let full_c = full
        .iter()
        .map(|g| ratio(g * n as f64, upper_scale * sum_deriv.abs()))
        .fold(0.0, f64::max);
    entries.push(
        PropertyEntry::new(
            "perturbation_viii_gradient_upper",
            "perturbation (viii)",
            full.iter().copied().fold(0.0, f64::max),
            None,
            "C L^2 M^{1/2} |sum l'| / n",
            full_c,
            Check::Report,
        )
        .with_values(full),
    );
    let b = opts.batch_size.clamp(1, n);
    let mut rng = Rng::with_stream(opts.seed, Stream::Batches);
    let mut stoch_c = 0.0f64;
    let mut stoch_max = 0.0f64;
    for _ in 0..opts.batches.max(1) {
        let batch = rng.sample_without_replacement(n, b);
        let coeffs = loss_coefficients(&tt.outputs, data, loss, &batch, b as f64);
        let g = weighted_output_gradient(tilde, &tt, &batch, &coeffs)?;
        let bsum: f64 = batch.iter().map(|&i| loss.deriv(ms[i])).sum();
        for layer in &g.layers {
            let sn = spectral_norm_default(layer)?;
            stoch_max = stoch_max.max(sn);
            stoch_c = stoch_c.max(ratio(sn * b as f64, upper_scale * bsum.abs()));
        }
    }
    entries.push(PropertyEntry::new(
        "perturbation_viii_stochastic_upper",
        "perturbation (viii)",
        stoch_max,
        None,
        "C L^2 M^{1/2} |sum_B l'| / B",
        stoch_c,
        Check::Report,
    ));

    Ok(PropertyReport::from_entries(entries, flags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_separated;
    use crate::linalg::Matrix;
    use crate::losses::LOGISTIC;
    use crate::network::init_network;

    fn setup() -> (NetworkParams, Dataset) {
        (
            init_network(&[5, 48, 48, 48], 3).unwrap(),
            generate_separated(6, 5, 0.5, 0.1, 2).unwrap(),
        )
    }

    #[test]
    fn identical_networks_have_zero_drift() {
        let (p, d) = setup();
        let r = verify_perturbation_properties(&p, &p, &p, &d, &LOGISTIC, &PerturbationOptions::default()).unwrap();
        for name in [
            "perturbation_radius",
            "perturbation_ii_hidden_drift",
            "perturbation_iii_pattern_change",
            "perturbation_iv_changed_nodes",
        ] {
            let e = r.entry(name).unwrap();
            assert_eq!(e.measured, 0.0, "{name}");
            assert_eq!(e.constant, 0.0, "{name}");
        }
        assert!(r.entry("perturbation_vii_gradient_lower").unwrap().measured > 0.0);
        assert_eq!(r.flags.len(), 1);
        assert!(r.entry("perturbation_vi_sparse_output").is_none());
    }

    #[test]
    fn rank_one_drift_is_lipschitz() {
        let (p, d) = setup();
        let tau = 1e-3;
        let trace = forward_dataset(&p, &d).unwrap();
        let x = trace.hidden_vec(1, 0);
        let nx = crate::linalg::norm2(&x);
        let u: Vec<f64> = x.iter().map(|v| v / nx).collect();
        let active = (0..48).find(|&j| trace.hidden[2].get(j, 0) > 0.0).unwrap();
        let mut v = vec![0.0; 48];
        v[active] = 1.0;
        let mut ws = p.weights().to_vec();
        ws[1].axpy(1.0, &Matrix::outer(&u, &v, tau)).unwrap();
        let hat = p.with_weights(ws).unwrap();
        let r = verify_perturbation_properties(&p, &p, &hat, &d, &LOGISTIC, &PerturbationOptions::default()).unwrap();
        let e = r.entry("perturbation_ii_hidden_drift").unwrap();
        assert!(e.measured > 0.0);
        // hidden outputs move by at most |W|-products times tau
        assert!(e.measured <= 10.0 * 3.0 * tau, "{e:?}");
        assert!(e.constant.is_finite() && e.constant < 10.0);
    }

    #[test]
    fn exceeding_declared_tau_is_flagged() {
        let (p, d) = setup();
        let mut ws = p.weights().to_vec();
        ws[0] = ws[0].scaled(1.1);
        let q = p.with_weights(ws).unwrap();
        let opts = PerturbationOptions {
            tau: Some(1e-6),
            products: false,
            ..PerturbationOptions::default()
        };
        let r = verify_perturbation_properties(&p, &q, &q, &d, &LOGISTIC, &opts).unwrap();
        assert_eq!(r.flags.len(), 1);
        assert!(!r.entry("perturbation_radius").unwrap().pass);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let (p, d) = setup();
        let q = init_network(&[5, 48, 48, 50], 3).unwrap();
        assert!(verify_perturbation_properties(&p, &q, &p, &d, &LOGISTIC, &PerturbationOptions::default()).is_err());
    }
}
