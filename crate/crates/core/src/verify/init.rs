use serde::{Deserialize, Serialize};

use super::chain::{top_s_norm, ChainOperator};
use super::{pattern_scale, Check, PropertyEntry, PropertyReport};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{
    matmul, norm2, power_iteration, spectral_norm_default, LinearOperator, Matrix, Op, Pattern,
};
use crate::network::{forward_dataset, init_network, BatchTrace, NetworkParams};
use crate::rng::{Rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitOptions {
    /// Activation threshold; `None` means `L^{4/3} tau^{2/3} m^{-1/2}`.
    pub beta: Option<f64>,
    /// Sparsity level; `None` means `ceil(L^{4/3} tau^{2/3} m)`.
    pub sparsity: Option<usize>,
    /// Perturbation level behind the default `beta` and `s`.
    pub tau: f64,
    pub delta: f64,
    /// Threshold on `max |(|x_{l,i}| - 1)|`.
    pub norm_tolerance: f64,
    /// Threshold on `max |y_hat_i|`.
    pub output_bound: f64,
    /// `c` in the node-count criterion `|...| >= c |a|_inf / n`.
    pub node_constant: f64,
    /// Use `a_i y_i` rather than `a_i` in the node-count sum.
    pub labeled_nodes: bool,
    /// Random sparse probes per chain.
    pub probes: usize,
    /// Examples (from index 0) used by the chain-product items; `None` means all.
    pub examples: Option<usize>,
    /// Run the chain-product items (v), (vi) and (vii).
    pub products: bool,
    /// Run the node-count item (viii).
    pub nodes: bool,
    /// Report the spectral norms of the weight matrices under item (i).
    pub weight_norms: bool,
    pub product_tol: f64,
    pub seed: u64,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            beta: None,
            sparsity: None,
            tau: 1e-3,
            delta: 0.05,
            norm_tolerance: 0.2,
            output_bound: 6.0,
            node_constant: 0.1,
            labeled_nodes: true,
            probes: 64,
            examples: None,
            products: true,
            nodes: true,
            weight_norms: true,
            product_tol: 1e-8,
            seed: 0,
        }
    }
}

impl InitOptions {
    pub fn resolve_beta(&self, depth: usize, width: usize) -> f64 {
        self.beta
            .unwrap_or_else(|| pattern_scale(depth, self.tau) / (width as f64).sqrt())
    }

    pub fn resolve_sparsity(&self, depth: usize, width: usize) -> usize {
        self.sparsity
            .unwrap_or_else(|| ((pattern_scale(depth, self.tau) * width as f64).ceil() as usize).max(1))
    }
}

/// Pre-activations `W_l^T X_{l-1}` (`m_l x n`) for every layer.
pub(crate) fn pre_activations(params: &NetworkParams, trace: &BatchTrace) -> Vec<Matrix> {
    params
        .weights()
        .iter()
        .zip(&trace.hidden)
        .map(|(w, x)| matmul(w, Op::T, x, Op::N))
        .collect()
}

fn column_norms(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(r)) {
            *o += v * v;
        }
    }
    out.into_iter().map(f64::sqrt).collect()
}

/// Minimum cross-class distance and minimum pairwise inner product of the
/// normalized columns of `x`.
fn normalized_geometry(x: &Matrix, data: &Dataset) -> (f64, f64) {
    let norms = column_norms(x);
    let gram = matmul(x, Op::T, x, Op::N);
    let n = x.cols();
    let mut min_sep = f64::INFINITY;
    let mut min_inner = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            let denom = norms[i] * norms[j];
            let cos = if denom > 0.0 { gram.get(i, j) / denom } else { 0.0 };
            min_inner = min_inner.min(cos);
            if data.labels()[i] != data.labels()[j] {
                min_sep = min_sep.min((2.0 - 2.0 * cos).max(0.0).sqrt());
            }
        }
    }
    (min_sep, min_inner)
}

/// Unit vector in dimension `dim` supported on `s` random coordinates.
pub(crate) fn sparse_probe(rng: &mut Rng, dim: usize, s: usize) -> Vec<f64> {
    let support = rng.sample_without_replacement(dim, s.min(dim));
    let mut v = vec![0.0; dim];
    for &j in &support {
        v[j] = rng.gaussian();
    }
    let nv = norm2(&v);
    if nv > 0.0 {
        v.iter_mut().for_each(|x| *x /= nv);
    }
    v
}

pub(crate) fn chain_steps<'a>(
    params: &'a NetworkParams,
    trace: &BatchTrace,
    i: usize,
    masked: std::ops::RangeInclusive<usize>,
    trailing: Option<usize>,
) -> ChainOperator<'a> {
    let mut steps: Vec<(&Matrix, Option<Pattern>)> = masked
        .map(|r| (params.layer(r), Some(trace.pattern(r, i))))
        .collect();
    if let Some(t) = trailing {
        steps.push((params.layer(t), None));
    }
    ChainOperator::new(steps)
}

pub(crate) fn operator_norm<A: LinearOperator>(op: &A, tol: f64) -> f64 {
    match power_iteration(op, None, tol, 5000) {
        Ok(e) => e.sigma,
        Err(Error::NonConvergence { estimate, residual, .. }) => {
            log::warn!("product norm not converged (residual {residual:e}); using estimate");
            estimate
        }
        Err(e) => {
            log::warn!("product norm failed: {e}");
            f64::NAN
        }
    }
}

/// `|(1/n) sum_i a_i [y_i] 1{<w_{L,j}, x_{L-1,i}> > 0} x_{L-1,i}|_2` for every
/// node `j` of the last layer.
pub fn node_norms(params: &NetworkParams, data: &Dataset, a: &[f64], labeled: bool) -> Result<Vec<f64>> {
    if a.len() != data.n() {
        return Err(Error::DimensionMismatch {
            context: "node_norms weights",
            expected: data.n(),
            found: a.len(),
        });
    }
    let trace = forward_dataset(params, data)?;
    let depth = params.depth();
    let pre = matmul(params.layer(depth), Op::T, &trace.hidden[depth - 1], Op::N);
    let x = &trace.hidden[depth - 1];
    let gram = matmul(x, Op::T, x, Op::N);
    let n = data.n();
    let coef: Vec<f64> = (0..n)
        .map(|i| if labeled { a[i] * data.label(i) } else { a[i] })
        .collect();
    let mut c = vec![0.0; n];
    Ok((0..pre.rows())
        .map(|j| {
            let row = pre.row(j);
            for i in 0..n {
                c[i] = if row[i] > 0.0 { coef[i] } else { 0.0 };
            }
            let mut q = 0.0;
            for i in 0..n {
                if c[i] == 0.0 {
                    continue;
                }
                let g = gram.row(i);
                q += c[i] * c.iter().zip(g).map(|(ck, gk)| ck * gk).sum::<f64>();
            }
            q.max(0.0).sqrt() / n as f64
        })
        .collect())
}

/// Checks the properties a freshly initialized network satisfies with high
/// probability: hidden norms near one, preserved class separation, bounded
/// outputs, few near-zero pre-activations, bounded chain products, sparse
/// product bounds, many gradient-carrying last-layer nodes, and positive
/// pairwise inner products.
pub fn verify_init_properties(params: &NetworkParams, data: &Dataset, opts: &InitOptions) -> Result<PropertyReport> {
    let depth = params.depth();
    let n = data.n();
    let width = params.min_width();
    let big_m = params.max_width() as f64;
    let dl = depth as f64;
    let beta = opts.resolve_beta(depth, width);
    let s = opts.resolve_sparsity(depth, width);
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::invalid(format!("beta must be >= 0, got {beta}")));
    }
    if s == 0 || s > width {
        return Err(Error::invalid(format!(
            "sparsity s = {s} must be in 1..={width} (smallest hidden width)"
        )));
    }
    if !(opts.delta > 0.0 && opts.delta < 1.0) {
        return Err(Error::invalid("delta must be in (0, 1)"));
    }
    let trace = forward_dataset(params, data)?;
    let pre = pre_activations(params, &trace);
    let mut entries = Vec::new();
    let log_nl = ((n * depth) as f64 / opts.delta).ln();

    // (i)
    let devs: Vec<f64> = (1..=depth)
        .map(|l| {
            column_norms(&trace.hidden[l])
                .into_iter()
                .map(|v| (v - 1.0).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let dev = devs.iter().copied().fold(0.0, f64::max);
    entries.push(
        PropertyEntry::new(
            "init_i_norm_deviation",
            "init (i)",
            dev,
            Some(opts.norm_tolerance),
            format!("{}", opts.norm_tolerance),
            dev / (dl * (log_nl / width as f64).sqrt()),
            Check::AtMost,
        )
        .with_values(devs),
    );
    if opts.weight_norms {
        let wn: Vec<f64> = params
            .weights()
            .iter()
            .map(spectral_norm_default)
            .collect::<Result<_>>()?;
        let wmax = wn.iter().copied().fold(0.0, f64::max);
        entries.push(
            PropertyEntry::new("init_i_weight_norm", "init (i)", wmax, None, "C", wmax, Check::Report)
                .with_values(wn),
        );
    }

    // (ii) and pairwise inner products
    let mut seps = Vec::with_capacity(depth);
    let mut inners = Vec::with_capacity(depth);
    for l in 1..=depth {
        let (sep, inner) = normalized_geometry(&trace.hidden[l], data);
        seps.push(sep);
        inners.push(inner);
    }
    let sep = seps.iter().copied().fold(f64::INFINITY, f64::min);
    let phi = data.phi();
    entries.push(
        PropertyEntry::new(
            "init_ii_separation",
            "init (ii)",
            sep,
            Some(phi / 2.0),
            "phi/2",
            sep / phi,
            Check::AtLeast,
        )
        .with_values(seps),
    );

    // (iii)
    let ymax = trace.outputs.iter().map(|v| v.abs()).fold(0.0, f64::max);
    entries.push(PropertyEntry::new(
        "init_iii_output",
        "init (iii)",
        ymax,
        Some(opts.output_bound),
        format!("{}", opts.output_bound),
        ymax / (n as f64 / opts.delta).ln().sqrt(),
        Check::AtMost,
    ));

    // (iv)
    let mut counts = Vec::with_capacity(depth);
    let mut ratios = Vec::with_capacity(depth);
    for (l, z) in pre.iter().enumerate() {
        let m_l = params.layer_dims()[l + 1] as f64;
        let mut per_example = vec![0usize; n];
        for j in 0..z.rows() {
            for (c, v) in per_example.iter_mut().zip(z.row(j)) {
                if v.abs() <= beta {
                    *c += 1;
                }
            }
        }
        let worst = per_example.into_iter().max().unwrap_or(0);
        counts.push(worst as f64);
        ratios.push(super::ratio(worst as f64, 2.0 * m_l.powf(1.5) * beta));
    }
    let worst_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let iv = if beta > 0.0 {
        PropertyEntry::new(
            "init_iv_threshold_count",
            "init (iv)",
            worst_ratio,
            Some(1.0),
            "|S(beta)| / (2 m^{3/2} beta) <= 1",
            worst_ratio,
            Check::AtMost,
        )
        .with_values(ratios)
    } else {
        let c = counts.iter().copied().fold(0.0, f64::max);
        PropertyEntry::new("init_iv_threshold_count", "init (iv)", c, Some(0.0), "|S(0)| = 0", c, Check::AtMost)
            .with_values(counts)
    };
    entries.push(iv);

    if opts.products {
        let examples = opts.examples.unwrap_or(n).min(n);
        let mut rng = Rng::with_stream(opts.seed, Stream::Probes);
        let log_m = big_m.ln().max(f64::MIN_POSITIVE);

        // (v)
        let mut v_norms = Vec::new();
        for l1 in 1..depth {
            for l2 in (l1 + 1)..=depth {
                let mut worst = 0.0f64;
                for i in 0..examples {
                    let op = chain_steps(params, &trace, i, l1..=l2 - 1, Some(l2));
                    worst = worst.max(operator_norm(&op, opts.product_tol));
                }
                v_norms.push(worst);
            }
        }
        let vmax = v_norms.iter().copied().fold(0.0, f64::max);
        entries.push(
            PropertyEntry::new("init_v_product_norm", "init (v)", vmax, None, "C L", vmax / dl, Check::Report)
                .with_values(v_norms),
        );

        // (vi)
        let mut exact = Vec::with_capacity(depth);
        let mut probed = Vec::with_capacity(depth);
        for l in 1..=depth {
            let dim = params.layer_dims()[l - 1];
            let mut worst_exact = 0.0f64;
            let mut worst_probe = f64::NEG_INFINITY;
            for i in 0..examples {
                let op = chain_steps(params, &trace, i, l..=depth, None);
                let u = op.apply_t(params.output_vector());
                worst_exact = worst_exact.max(top_s_norm(&u, s));
                for _ in 0..opts.probes {
                    let a = sparse_probe(&mut rng, dim, s);
                    worst_probe = worst_probe.max(crate::linalg::dot(&u, &a));
                }
            }
            exact.push(worst_exact);
            probed.push(worst_probe);
        }
        let scale_vi = dl * (s as f64 * log_m).sqrt();
        let emax = exact.iter().copied().fold(0.0, f64::max);
        entries.push(
            PropertyEntry::new(
                "init_vi_sparse_output",
                "init (vi)",
                emax,
                None,
                "C L sqrt(s log M)",
                emax / scale_vi,
                Check::Report,
            )
            .with_values(exact.clone()),
        );
        let pmax = probed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probe_entry = PropertyEntry::new(
            "init_vi_sparse_output_probes",
            "init (vi)",
            pmax,
            None,
            "C L sqrt(s log M)",
            pmax / scale_vi,
            Check::Report,
        )
        .with_values(probed.clone());
        // random probes can never beat the exact supremum
        probe_entry.pass &= probed.iter().zip(&exact).all(|(p, e)| *p <= e * (1.0 + 1e-12) + 1e-300);
        entries.push(probe_entry);

        // (vii)
        let mut double = Vec::new();
        for l1 in 1..depth {
            for l2 in (l1 + 1)..=depth {
                let dim_b = params.layer_dims()[l2];
                let probes = opts.probes.max(1);
                let mut worst = 0.0f64;
                for i in 0..examples {
                    let op = chain_steps(params, &trace, i, l1..=l2 - 1, Some(l2));
                    let mut b = Matrix::zeros(dim_b, probes);
                    for k in 0..probes {
                        for (r, v) in sparse_probe(&mut rng, dim_b, s).into_iter().enumerate() {
                            if v != 0.0 {
                                b.set(r, k, v);
                            }
                        }
                    }
                    let back = op.apply_t_columns(&b);
                    for k in 0..probes {
                        worst = worst.max(top_s_norm(&back.column(k), s));
                    }
                }
                double.push(worst);
            }
        }
        let dmax = double.iter().copied().fold(0.0, f64::max);
        entries.push(
            PropertyEntry::new(
                "init_vii_double_sparse",
                "init (vii)",
                dmax,
                None,
                "C L sqrt(s log M / m)",
                dmax / (dl * (s as f64 * log_m / width as f64).sqrt()),
                Check::Report,
            )
            .with_values(double),
        );
    }

    if opts.nodes {
        let mut rng = Rng::with_stream(opts.seed ^ 0x5eed_0de5, Stream::Probes);
        let a: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let amax = a.iter().copied().fold(0.0, f64::max);
        let norms = node_norms(params, data, &a, opts.labeled_nodes)?;
        let threshold = opts.node_constant * amax / n as f64;
        let count = norms.iter().filter(|v| **v >= threshold).count() as f64;
        let m_last = *params.layer_dims().last().unwrap() as f64;
        let prediction = m_last * phi / n as f64;
        entries.push(
            PropertyEntry::new(
                "init_viii_node_count",
                "init (viii)",
                count,
                Some(0.0),
                "C m_L phi / n",
                count / prediction,
                Check::Report,
            )
            .with_values(vec![count / m_last]),
        );
    }

    let inner = inners.iter().copied().fold(f64::INFINITY, f64::min);
    let mu = data.mu();
    entries.push(
        PropertyEntry::new(
            "init_inner_product",
            "inner products",
            inner,
            Some(mu * mu / 2.0),
            "mu^2/2",
            inner / (mu * mu),
            Check::AtLeast,
        )
        .with_values(inners),
    );

    Ok(PropertyReport::from_entries(entries, Vec::new()))
}

/// Re-initializes the network once per seed, checks each draw, and folds the
/// results with [`PropertyReport::aggregate`].
pub fn verify_init_trials(
    layer_dims: &[usize],
    data: &Dataset,
    opts: &InitOptions,
    seeds: &[u64],
    allowed_failures: usize,
    stability_ratio: f64,
) -> Result<PropertyReport> {
    if seeds.is_empty() {
        return Err(Error::invalid("at least one trial seed is required"));
    }
    let reports = seeds
        .iter()
        .map(|&seed| {
            let params = init_network(layer_dims, seed)?;
            let o = InitOptions { seed, ..opts.clone() };
            verify_init_properties(&params, data, &o)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PropertyReport::aggregate(&reports, allowed_failures, stability_ratio))
}
