//! The `L`-hidden-layer ReLU network
//!
//! ```text
//! f_W(x) = v^T relu(W_L^T relu(W_{L-1}^T ... relu(W_1^T x)))
//! ```
//!
//! with `W_l` of shape `m_{l-1} x m_l`, `m_0 = d`, and a fixed output vector
//! `v` whose first half is `+1` and second half `-1`. There are no hidden
//! biases; the bias enters through the constant last input coordinate.
//!
//! Activation patterns use the strict indicator `1{z > 0}`, so the ReLU
//! derivative at exactly zero is taken to be `0`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, gaussian_matrix, gemm, matmul, pattern_of, Matrix, Op, Pattern};
use crate::losses::LossSpec;
use crate::rng::{Rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layer_dims: Vec<usize>,
    weights: Vec<Matrix>,
    output_vector: Vec<f64>,
    seed: Option<u64>,
}

impl NetworkParams {
    /// Assembles parameters from explicit weights. `output_vector` entries must
    /// be `+-1`, half of each.
    pub fn new(weights: Vec<Matrix>, output_vector: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("network needs at least one hidden layer"));
        }
        let mut layer_dims = vec![weights[0].rows()];
        for (l, w) in weights.iter().enumerate() {
            if w.rows() != *layer_dims.last().unwrap() {
                return Err(Error::DimensionMismatch {
                    context: "NetworkParams::new weight rows",
                    expected: layer_dims[l],
                    found: w.rows(),
                });
            }
            if w.rows() == 0 || w.cols() == 0 {
                return Err(Error::invalid("layer dimensions must be >= 1"));
            }
            layer_dims.push(w.cols());
        }
        let m_last = *layer_dims.last().unwrap();
        if output_vector.len() != m_last {
            return Err(Error::DimensionMismatch {
                context: "NetworkParams::new output vector",
                expected: m_last,
                found: output_vector.len(),
            });
        }
        check_output_vector(&output_vector)?;
        Ok(Self {
            layer_dims,
            weights,
            output_vector,
            seed: None,
        })
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    /// `[m_0, m_1, ..., m_L]`.
    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    /// Number of hidden layers `L`.
    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    /// `M = max(m_1..m_L)`.
    pub fn max_width(&self) -> usize {
        *self.layer_dims[1..].iter().max().unwrap()
    }

    /// `m = min(m_1..m_L)`.
    pub fn min_width(&self) -> usize {
        *self.layer_dims[1..].iter().min().unwrap()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    /// Weight matrix of hidden layer `l`, 1-based.
    pub fn layer(&self, l: usize) -> &Matrix {
        &self.weights[l - 1]
    }

    pub fn output_vector(&self) -> &[f64] {
        &self.output_vector
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Replaces the weights, keeping dims, `v` and seed provenance.
    pub fn with_weights(&self, weights: Vec<Matrix>) -> Result<Self> {
        if weights.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                context: "with_weights layer count",
                expected: self.weights.len(),
                found: weights.len(),
            });
        }
        for (w, old) in weights.iter().zip(&self.weights) {
            if w.shape() != old.shape() {
                return Err(Error::invalid(format!(
                    "with_weights shape {:?} != {:?}",
                    w.shape(),
                    old.shape()
                )));
            }
        }
        Ok(Self {
            weights,
            ..self.clone()
        })
    }

    /// `W_l <- W_l - eta * grad_l` for every layer.
    pub fn apply_step(&mut self, eta: f64, grads: &LayerGradients) -> Result<()> {
        for (w, g) in self.weights.iter_mut().zip(&grads.layers) {
            w.axpy(-eta, g)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, &ParamsFile::from(self))?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let file: ParamsFile = serde_json::from_reader(f)?;
        file.try_into()
    }
}

fn check_output_vector(v: &[f64]) -> Result<()> {
    if v.len() % 2 != 0 {
        return Err(Error::invalid(format!(
            "last hidden width must be even, got {}",
            v.len()
        )));
    }
    let plus = v.iter().filter(|&&x| x == 1.0).count();
    let minus = v.iter().filter(|&&x| x == -1.0).count();
    if plus != v.len() / 2 || minus != v.len() / 2 {
        return Err(Error::invalid(
            "output vector must have exactly half +1 and half -1 entries",
        ));
    }
    Ok(())
}

/// Checkpoint container. Weights are stored row-major.
#[derive(Debug, Serialize, Deserialize)]
pub struct ParamsFile {
    pub format: String,
    pub version: u32,
    pub layer_dims: Vec<usize>,
    pub seed: Option<u64>,
    pub output_vector: Vec<f64>,
    pub weights: Vec<Matrix>,
}

pub const PARAMS_FORMAT: &str = "overparam-network";
pub const PARAMS_VERSION: u32 = 1;

impl From<&NetworkParams> for ParamsFile {
    fn from(p: &NetworkParams) -> Self {
        ParamsFile {
            format: PARAMS_FORMAT.into(),
            version: PARAMS_VERSION,
            layer_dims: p.layer_dims.clone(),
            seed: p.seed,
            output_vector: p.output_vector.clone(),
            weights: p.weights.clone(),
        }
    }
}

impl TryFrom<ParamsFile> for NetworkParams {
    type Error = Error;

    fn try_from(f: ParamsFile) -> Result<Self> {
        if f.format != PARAMS_FORMAT || f.version != PARAMS_VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint {} v{}",
                f.format, f.version
            )));
        }
        // Matrix deserializes without checks; rebuild through from_vec.
        let weights = f
            .weights
            .into_iter()
            .map(|w| {
                let (r, c) = w.shape();
                Matrix::from_vec(r, c, w.into_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        let p = NetworkParams::new(weights, f.output_vector)?.with_seed(f.seed);
        if p.layer_dims != f.layer_dims {
            return Err(Error::Parse("layer_dims disagree with weight shapes".into()));
        }
        Ok(p)
    }
}

/// Gaussian initialization: entries of `W_l` are i.i.d. `N(0, 2 / m_l)`,
/// drawn layer by layer, row-major, from the `Init` stream of `seed`.
pub fn init_network(layer_dims: &[usize], seed: u64) -> Result<NetworkParams> {
    if layer_dims.len() < 2 {
        return Err(Error::invalid("layer_dims needs [d, m_1, ..., m_L] with L >= 1"));
    }
    if layer_dims.contains(&0) {
        return Err(Error::invalid("all layer dims must be >= 1"));
    }
    let m_last = *layer_dims.last().unwrap();
    if m_last % 2 != 0 {
        return Err(Error::invalid(format!("m_L must be even, got {m_last}")));
    }
    let mut rng = Rng::with_stream(seed, Stream::Init);
    let weights = layer_dims
        .windows(2)
        .map(|w| gaussian_matrix(w[0], w[1], 2.0 / w[1] as f64, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let v = (0..m_last)
        .map(|j| if j < m_last / 2 { 1.0 } else { -1.0 })
        .collect();
    Ok(NetworkParams::new(weights, v)?.with_seed(Some(seed)))
}

/// Per-example forward pass record.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `hidden[l]` is `x_l` for `l = 0..=L`; `hidden[0]` is the input.
    pub hidden: Vec<Vec<f64>>,
    /// `patterns[l - 1]` is the pattern of hidden layer `l`.
    pub patterns: Vec<Pattern>,
    pub output: f64,
}

pub fn forward(params: &NetworkParams, x: &[f64]) -> Result<ForwardTrace> {
    if x.len() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "forward input",
            expected: params.input_dim(),
            found: x.len(),
        });
    }
    let mut hidden = vec![x.to_vec()];
    let mut patterns = Vec::with_capacity(params.depth());
    for w in &params.weights {
        let pre = w.matvec_t(hidden.last().unwrap());
        let pat = pattern_of(&pre);
        hidden.push(pre.into_iter().map(|z| if z > 0.0 { z } else { 0.0 }).collect());
        patterns.push(pat);
    }
    let output = dot(&params.output_vector, hidden.last().unwrap());
    Ok(ForwardTrace {
        hidden,
        patterns,
        output,
    })
}

/// Recomputes the output from layer `l` using the stored patterns:
/// `v^T (prod_{r=l}^{L} Sigma_r W_r^T) x_{l-1}`. `l` ranges over `1..=L+1`;
/// `l = L + 1` is the empty product.
pub fn output_telescope(params: &NetworkParams, trace: &ForwardTrace, l: usize) -> Result<f64> {
    let depth = params.depth();
    if l == 0 || l > depth + 1 {
        return Err(Error::invalid(format!("layer index {l} outside 1..={}", depth + 1)));
    }
    if trace.hidden.len() != depth + 1 || trace.patterns.len() != depth {
        return Err(Error::invalid("trace does not match network depth"));
    }
    let mut x = trace.hidden[l - 1].clone();
    for r in l..=depth {
        let pre = params.layer(r).matvec_t(&x);
        let mask = &trace.patterns[r - 1];
        x = pre
            .into_iter()
            .zip(mask.iter())
            .map(|(z, on)| if *on { z } else { 0.0 })
            .collect();
    }
    Ok(dot(&params.output_vector, &x))
}

/// Forward pass over a set of examples, one column per example.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    /// `hidden[l]` is `m_l x n`; `hidden[0]` holds the inputs.
    pub hidden: Vec<Matrix>,
    pub outputs: Vec<f64>,
}

impl BatchTrace {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// Pattern of hidden layer `l` (1-based) for example column `i`. A unit is
    /// active iff its post-activation is positive, which is equivalent to a
    /// positive pre-activation.
    pub fn pattern(&self, l: usize, i: usize) -> Pattern {
        let h = &self.hidden[l];
        (0..h.rows()).map(|j| h.get(j, i) > 0.0).collect()
    }

    /// `x_{l,i}` as an owned vector.
    pub fn hidden_vec(&self, l: usize, i: usize) -> Vec<f64> {
        self.hidden[l].column(i)
    }
}

pub fn forward_batch(params: &NetworkParams, inputs: &Matrix) -> Result<BatchTrace> {
    if inputs.rows() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "forward_batch input rows",
            expected: params.input_dim(),
            found: inputs.rows(),
        });
    }
    let mut hidden = Vec::with_capacity(params.depth() + 1);
    hidden.push(inputs.clone());
    for w in &params.weights {
        let mut z = matmul(w, Op::T, hidden.last().unwrap(), Op::N);
        for v in z.as_mut_slice() {
            if !(*v > 0.0) {
                *v = 0.0;
            }
        }
        hidden.push(z);
    }
    let outputs = hidden
        .last()
        .unwrap()
        .matvec_t(&params.output_vector);
    Ok(BatchTrace { hidden, outputs })
}

pub fn forward_dataset(params: &NetworkParams, data: &Dataset) -> Result<BatchTrace> {
    forward_batch(params, &data.input_matrix())
}

/// `y_i * y_hat_i` for each example.
pub fn margins(outputs: &[f64], data: &Dataset) -> Vec<f64> {
    outputs
        .iter()
        .enumerate()
        .map(|(i, o)| data.label(i) * o)
        .collect()
}

/// Empirical risk `(1/n) sum_i l(y_i y_hat_i)`.
pub fn batch_loss(params: &NetworkParams, data: &Dataset, loss: &LossSpec) -> Result<f64> {
    let trace = forward_dataset(params, data)?;
    Ok(mean_loss(&trace.outputs, data, loss))
}

pub fn mean_loss(outputs: &[f64], data: &Dataset, loss: &LossSpec) -> f64 {
    let total: f64 = margins(outputs, data).into_iter().map(|m| loss.eval(m)).sum();
    total / data.n() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub layers: Vec<Matrix>,
}

impl LayerGradients {
    pub fn layer(&self, l: usize) -> &Matrix {
        &self.layers[l - 1]
    }
}

/// `sum_{k} coeffs[k] * grad_W f(x_{indices[k]})` using the patterns held in
/// `trace`. Accumulation over examples runs in the order of `indices`.
///
/// Per example, `grad_{W_l} f = x_{l-1} g_l^T` with
/// `g_L = Sigma_L v` and `g_l = Sigma_l W_{l+1} g_{l+1}`.
pub fn weighted_output_gradient(
    params: &NetworkParams,
    trace: &BatchTrace,
    indices: &[usize],
    coeffs: &[f64],
) -> Result<LayerGradients> {
    if indices.len() != coeffs.len() {
        return Err(Error::DimensionMismatch {
            context: "weighted_output_gradient coeffs",
            expected: indices.len(),
            found: coeffs.len(),
        });
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= trace.len()) {
        return Err(Error::invalid(format!("example index {bad} out of range")));
    }
    let depth = params.depth();
    let b = indices.len();
    let take = |m: &Matrix| -> Matrix {
        if b == m.cols() && indices.iter().enumerate().all(|(k, &i)| k == i) {
            return m.clone();
        }
        let mut out = Matrix::zeros(m.rows(), b);
        for r in 0..m.rows() {
            let row = m.row(r);
            for (k, &i) in indices.iter().enumerate() {
                out.set(r, k, row[i]);
            }
        }
        out
    };
    let hidden: Vec<Matrix> = trace.hidden.iter().map(take).collect();

    // g_L columns: coeff_k * Sigma_L v
    let m_last = params.layer_dims[depth];
    let mut g = Matrix::zeros(m_last, b);
    for j in 0..m_last {
        let vj = params.output_vector[j];
        let hrow = hidden[depth].row(j);
        for k in 0..b {
            if hrow[k] > 0.0 {
                g.set(j, k, coeffs[k] * vj);
            }
        }
    }
    let mut layers = vec![Matrix::zeros(0, 0); depth];
    for l in (1..=depth).rev() {
        let w = params.layer(l);
        let mut grad = Matrix::zeros(w.rows(), w.cols());
        gemm(1.0, &hidden[l - 1], Op::N, &g, Op::T, 0.0, &mut grad);
        layers[l - 1] = grad;
        if l > 1 {
            let mut next = matmul(w, Op::N, &g, Op::N);
            let mask = &hidden[l - 1];
            for (gv, hv) in next.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                if !(*hv > 0.0) {
                    *gv = 0.0;
                }
            }
            g = next;
        }
    }
    Ok(LayerGradients { layers })
}

/// Coefficients `l'(y_i y_hat_i) * y_i / scale` of the loss gradient.
pub fn loss_coefficients(
    outputs: &[f64],
    data: &Dataset,
    loss: &LossSpec,
    indices: &[usize],
    scale: f64,
) -> Vec<f64> {
    indices
        .iter()
        .map(|&i| {
            let y = data.label(i);
            loss.deriv(y * outputs[i]) * y / scale
        })
        .collect()
}

/// `grad_{W_l} L_S = (1/n) sum_i l'(y_i y_hat_i) y_i x_{l-1,i} v^T
/// (prod_{r=l+1}^{L} Sigma_{r,i} W_r^T) Sigma_{l,i}`.
pub fn loss_gradient(params: &NetworkParams, data: &Dataset, loss: &LossSpec) -> Result<LayerGradients> {
    let trace = forward_dataset(params, data)?;
    let all: Vec<usize> = (0..data.n()).collect();
    let coeffs = loss_coefficients(&trace.outputs, data, loss, &all, data.n() as f64);
    weighted_output_gradient(params, &trace, &all, &coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_separated;
    use crate::losses::LOGISTIC;
    use approx::assert_relative_eq;

    fn tiny() -> NetworkParams {
        init_network(&[3, 4, 6], 1).unwrap()
    }

    #[test]
    fn init_shapes_and_output_vector() {
        let p = init_network(&[2, 2], 5).unwrap();
        assert_eq!(p.output_vector(), &[1.0, -1.0]);
        assert_eq!(p.layer(1).shape(), (2, 2));
        assert_eq!(p.seed(), Some(5));
        let q = init_network(&[3, 5, 8], 0).unwrap();
        assert_eq!(q.layer_dims(), &[3, 5, 8]);
        assert_eq!(q.output_vector(), &[1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0]);
    }

    #[test]
    fn init_rejects_odd_last_width() {
        assert!(init_network(&[3, 4, 5], 0).is_err());
        assert!(init_network(&[3], 0).is_err());
        assert!(init_network(&[3, 0, 4], 0).is_err());
    }

    #[test]
    fn init_deterministic() {
        assert_eq!(init_network(&[3, 10, 4], 9).unwrap(), init_network(&[3, 10, 4], 9).unwrap());
    }

    #[test]
    fn column_norms_match_variance() {
        let p = init_network(&[3, 100, 100, 4], 2).unwrap();
        let w2 = p.layer(2);
        let mean: f64 = (0..100)
            .map(|j| w2.column(j).iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            / 100.0;
        assert!((mean - 2.0).abs() <= 0.2, "mean column norm^2 {mean}");
    }

    #[test]
    fn zero_input_gives_zero() {
        let p = tiny();
        let t = forward(&p, &[0.0; 3]).unwrap();
        assert_eq!(t.output, 0.0);
        assert!(t.hidden.iter().skip(1).all(|h| h.iter().all(|v| *v == 0.0)));
        assert!(t.patterns.iter().all(|pat| pat.not_any()));
    }

    #[test]
    fn positive_network_is_linear() {
        let w1 = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.25, 2.0]]).unwrap();
        let w2 = Matrix::from_rows(&[vec![0.3, 0.7], vec![1.1, 0.2]]).unwrap();
        let p = NetworkParams::new(vec![w1.clone(), w2.clone()], vec![1.0, -1.0]).unwrap();
        let x = [0.6, 0.8];
        let h1 = w1.matvec_t(&x);
        let h2 = w2.matvec_t(&h1);
        let want = h2[0] - h2[1];
        assert_eq!(forward(&p, &x).unwrap().output, want);
    }

    #[test]
    fn forward_dimension_mismatch() {
        assert!(forward(&tiny(), &[1.0, 2.0]).is_err());
    }

    #[test]
    fn telescope_bounds() {
        let p = tiny();
        let t = forward(&p, &[0.3, -0.2, 0.5]).unwrap();
        assert!(output_telescope(&p, &t, 0).is_err());
        assert!(output_telescope(&p, &t, 4).is_err());
        assert_eq!(output_telescope(&p, &t, 3).unwrap(), t.output);
    }

    #[test]
    fn batch_forward_matches_single() {
        let p = init_network(&[4, 7, 6], 3).unwrap();
        let ds = generate_separated(5, 4, 0.5, 0.1, 1).unwrap();
        let bt = forward_dataset(&p, &ds).unwrap();
        for i in 0..ds.n() {
            let t = forward(&p, ds.input(i)).unwrap();
            assert_relative_eq!(bt.outputs[i], t.output, epsilon = 1e-13);
            for l in 1..=p.depth() {
                assert_eq!(bt.pattern(l, i), t.patterns[l - 1]);
            }
        }
    }

    #[test]
    fn zero_weights_loss_is_log2() {
        let ws = vec![Matrix::zeros(4, 6), Matrix::zeros(6, 4)];
        let p = NetworkParams::new(ws, vec![1.0, 1.0, -1.0, -1.0]).unwrap();
        let ds = generate_separated(6, 4, 0.5, 0.1, 2).unwrap();
        assert_relative_eq!(batch_loss(&p, &ds, &LOGISTIC).unwrap(), std::f64::consts::LN_2);
    }

    #[test]
    fn zero_inputs_give_zero_gradient() {
        let p = init_network(&[3, 4, 4], 0).unwrap();
        let ds = Dataset::new(vec![vec![0.0; 3]; 3], vec![1, -1, 1], 0.5, 0.1).unwrap();
        let g = loss_gradient(&p, &ds, &LOGISTIC).unwrap();
        assert!(g.layers.iter().all(|m| m.as_slice().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn zero_coefficients_give_zero_gradient() {
        let p = init_network(&[3, 4, 4], 0).unwrap();
        let ds = generate_separated(4, 3, 0.5, 0.1, 0).unwrap();
        let trace = forward_dataset(&p, &ds).unwrap();
        let g = weighted_output_gradient(&p, &trace, &[0, 1, 2, 3], &[0.0; 4]).unwrap();
        assert!(g.layers.iter().all(|m| m.as_slice().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = init_network(&[3, 4, 6], 12).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        p.save_json(&path).unwrap();
        assert_eq!(NetworkParams::load_json(&path).unwrap(), p);
    }

    #[test]
    fn checkpoint_rejects_bad_output_vector() {
        let p = init_network(&[3, 4], 1).unwrap();
        let mut f = ParamsFile::from(&p);
        f.output_vector = vec![1.0, 1.0, 1.0, -1.0];
        assert!(NetworkParams::try_from(f).is_err());
    }
}
