//! Training sets on the unit sphere with a fixed bias coordinate.
//!
//! Every input satisfies `|x| = 1` and `x[d-1] = mu`, and inputs with
//! different labels are at least `phi` apart. Same-class points are not
//! forced apart.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm2, Matrix};
use crate::rng::{Rng, Stream};

/// Resample budget for [`generate_separated`].
pub const REJECTION_BUDGET: usize = 100_000;
pub const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    labels: Vec<i8>,
    mu: f64,
    phi: f64,
}

impl Dataset {
    /// Checks shapes and label values only; the geometric conditions are
    /// reported by [`validate_dataset`].
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<i8>, mu: f64, phi: f64) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::invalid("dataset must contain at least one example"));
        }
        if inputs.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "Dataset::new labels",
                expected: inputs.len(),
                found: labels.len(),
            });
        }
        let d = inputs[0].len();
        if d == 0 {
            return Err(Error::invalid("inputs must have at least one coordinate"));
        }
        for x in &inputs {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "Dataset::new inputs",
                    expected: d,
                    found: x.len(),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("non-finite input coordinate"));
            }
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 1 && y != -1) {
            return Err(Error::invalid(format!("labels must be +1 or -1, got {bad}")));
        }
        Ok(Self {
            inputs,
            labels,
            mu,
            phi,
        })
    }

    pub fn n(&self) -> usize {
        self.inputs.len()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, i: usize) -> f64 {
        self.labels[i] as f64
    }

    /// `d x n` matrix with example `i` in column `i`.
    pub fn input_matrix(&self) -> Matrix {
        self.input_matrix_for(&(0..self.n()).collect::<Vec<_>>())
    }

    pub fn input_matrix_for(&self, indices: &[usize]) -> Matrix {
        let d = self.dim();
        let mut m = Matrix::zeros(d, indices.len());
        for (c, &i) in indices.iter().enumerate() {
            for (r, v) in self.inputs[i].iter().enumerate() {
                m.set(r, c, *v);
            }
        }
        m
    }

    /// Keeps only the listed examples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            mu: self.mu,
            phi: self.phi,
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# d={} mu={} phi={} n={}",
            self.dim(),
            self.mu,
            self.phi,
            self.n()
        )?;
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.dim()).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (x, y) in self.inputs.iter().zip(&self.labels) {
            let mut rec: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
            rec.push(y.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut first = String::new();
        reader.read_line(&mut first)?;
        let meta = first
            .trim()
            .strip_prefix('#')
            .ok_or_else(|| Error::Parse("missing '# d=.. mu=.. phi=..' metadata line".into()))?;
        let mut d = None;
        let mut mu = None;
        let mut phi = None;
        for tok in meta.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad metadata token '{tok}'")))?;
            let parse = |v: &str| {
                v.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("metadata {k}: {e}")))
            };
            match k {
                "d" => d = Some(parse(v)? as usize),
                "mu" => mu = Some(parse(v)?),
                "phi" => phi = Some(parse(v)?),
                _ => {}
            }
        }
        let (d, mu, phi) = match (d, mu, phi) {
            (Some(d), Some(mu), Some(phi)) => (d, mu, phi),
            _ => return Err(Error::Parse("metadata must define d, mu and phi".into())),
        };
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != d + 1 {
                return Err(Error::DimensionMismatch {
                    context: "dataset CSV row",
                    expected: d + 1,
                    found: rec.len(),
                });
            }
            let x = rec
                .iter()
                .take(d)
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("input value: {e}")))?;
            let y = rec[d]
                .trim()
                .parse::<i8>()
                .map_err(|e| Error::Parse(format!("label: {e}")))?;
            inputs.push(x);
            labels.push(y);
        }
        Dataset::new(inputs, labels, mu, phi)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Largest possible distance between two points of the slice
/// `{|x| = 1, x_d = mu}`.
pub fn slice_diameter(mu: f64) -> f64 {
    2.0 * (1.0 - mu * mu).sqrt()
}

/// Draws `n` points uniformly on the slice `{|x| = 1, x_d = mu}` with
/// alternating labels `+1, -1, +1, ...`. A draw is rejected while it lies
/// closer than `phi` to an already accepted point of the other class.
pub fn generate_separated(n: usize, d: usize, mu: f64, phi: f64, seed: u64) -> Result<Dataset> {
    if d < 3 {
        return Err(Error::invalid(format!("d must be >= 3, got {d}")));
    }
    if n < 2 {
        return Err(Error::invalid(format!("n must be >= 2, got {n}")));
    }
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::invalid(format!("mu must be in (0, 1), got {mu}")));
    }
    if !(phi > 0.0) {
        return Err(Error::invalid(format!("phi must be > 0, got {phi}")));
    }
    let cap = slice_diameter(mu);
    if phi > cap {
        return Err(Error::Infeasible(format!(
            "infeasible margin: phi = {phi} exceeds the slice diameter 2*sqrt(1-mu^2) = {cap}"
        )));
    }
    let radius = (1.0 - mu * mu).sqrt();
    let mut rng = Rng::with_stream(seed, Stream::Data);
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut labels: Vec<i8> = Vec::with_capacity(n);
    let mut resamples = 0usize;
    for i in 0..n {
        let y: i8 = if i % 2 == 0 { 1 } else { -1 };
        loop {
            let mut u = rng.gaussian_vec(d - 1);
            let nu = norm2(&u);
            if nu == 0.0 {
                continue;
            }
            u.iter_mut().for_each(|v| *v *= radius / nu);
            u.push(mu);
            let ok = inputs
                .iter()
                .zip(&labels)
                .filter(|(_, &yj)| yj != y)
                .all(|(xj, _)| distance(xj, &u) >= phi);
            if ok {
                inputs.push(u);
                labels.push(y);
                break;
            }
            resamples += 1;
            if resamples > REJECTION_BUDGET {
                return Err(Error::Infeasible(format!(
                    "could not place {n} points in d = {d} with cross-class margin {phi} \
                     after {REJECTION_BUDGET} resamples"
                )));
            }
        }
    }
    Dataset::new(inputs, labels, mu, phi)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub n: usize,
    pub d: usize,
    pub mu: f64,
    pub phi: f64,
    pub min_norm: f64,
    pub max_norm: f64,
    pub last_coord_min: f64,
    pub last_coord_max: f64,
    /// `None` when only one class is present (the condition is vacuous).
    pub min_cross_class_distance: Option<f64>,
    pub min_same_class_distance: Option<f64>,
    pub class_counts: ClassCounts,
    pub norms_ok: bool,
    pub bias_ok: bool,
    pub separation_ok: bool,
    pub pass: bool,
}

pub fn validate_dataset(data: &Dataset) -> MarginReport {
    let norms: Vec<f64> = data.inputs.iter().map(|x| norm2(x)).collect();
    let last: Vec<f64> = data.inputs.iter().map(|x| x[x.len() - 1]).collect();
    let fold_min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let fold_max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut cross: Option<f64> = None;
    let mut same: Option<f64> = None;
    for i in 0..data.n() {
        for j in (i + 1)..data.n() {
            let dist = distance(&data.inputs[i], &data.inputs[j]);
            let slot = if data.labels[i] != data.labels[j] {
                &mut cross
            } else {
                &mut same
            };
            *slot = Some(slot.map_or(dist, |m| m.min(dist)));
        }
    }
    let positive = data.labels.iter().filter(|&&y| y == 1).count();
    let norms_ok = norms.iter().all(|v| (v - 1.0).abs() <= NORM_TOL);
    let bias_ok = last.iter().all(|&v| v == data.mu);
    let separation_ok = cross.map_or(true, |c| c >= data.phi);
    MarginReport {
        n: data.n(),
        d: data.dim(),
        mu: data.mu,
        phi: data.phi,
        min_norm: fold_min(&norms),
        max_norm: fold_max(&norms),
        last_coord_min: fold_min(&last),
        last_coord_max: fold_max(&last),
        min_cross_class_distance: cross,
        min_same_class_distance: same,
        class_counts: ClassCounts {
            positive,
            negative: data.n() - positive,
        },
        norms_ok,
        bias_ok,
        separation_ok,
        pass: norms_ok && bias_ok && separation_ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_geometry() {
        assert!((slice_diameter(0.6) - 1.6).abs() < 1e-15);
        // antipodal pair within the slice realizes the diameter
        let a = vec![0.8, 0.0, 0.6];
        let b = vec![-0.8, 0.0, 0.6];
        assert!((distance(&a, &b) - 1.6).abs() < 1e-15);
    }

    #[test]
    fn generated_points_lie_on_slice() {
        let ds = generate_separated(30, 6, 0.3, 0.2, 4).unwrap();
        for x in ds.inputs() {
            assert!((norm2(x) - 1.0).abs() <= NORM_TOL);
            assert_eq!(x[5], 0.3);
        }
    }

    #[test]
    fn separation_holds() {
        let ds = generate_separated(20, 10, 0.5, 0.1, 7).unwrap();
        let r = validate_dataset(&ds);
        assert!(r.pass, "{r:?}");
        assert!(r.min_cross_class_distance.unwrap() >= 0.1);
        assert_eq!(r.class_counts, ClassCounts { positive: 10, negative: 10 });
    }

    #[test]
    fn odd_n_is_balanced() {
        let ds = generate_separated(5, 4, 0.5, 0.1, 1).unwrap();
        assert_eq!(ds.labels(), &[1, -1, 1, -1, 1]);
    }

    #[test]
    fn deterministic() {
        let a = generate_separated(10, 5, 0.5, 0.3, 99).unwrap();
        let b = generate_separated(10, 5, 0.5, 0.3, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_parameters() {
        assert!(matches!(generate_separated(4, 2, 0.5, 0.1, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(generate_separated(1, 4, 0.5, 0.1, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(generate_separated(4, 4, 1.0, 0.1, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(generate_separated(4, 4, 0.6, 1.61, 0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn infeasible_after_budget() {
        // Opposite classes must be almost antipodal; in high dimension a
        // random draw essentially never lands in that cap.
        let err = generate_separated(6, 30, 0.6, 1.59, 0).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)), "{err:?}");
    }

    #[test]
    fn duplicate_across_classes_flagged() {
        let x = vec![0.8, 0.0, 0.6];
        let ds = Dataset::new(vec![x.clone(), x], vec![1, -1], 0.6, 0.1).unwrap();
        let r = validate_dataset(&ds);
        assert_eq!(r.min_cross_class_distance, Some(0.0));
        assert!(!r.separation_ok);
        assert!(!r.pass);
    }

    #[test]
    fn single_class_is_vacuous() {
        let ds = Dataset::new(
            vec![vec![0.8, 0.0, 0.6], vec![0.0, 0.8, 0.6]],
            vec![1, 1],
            0.6,
            0.1,
        )
        .unwrap();
        let r = validate_dataset(&ds);
        assert_eq!(r.min_cross_class_distance, None);
        assert!(r.separation_ok);
        assert!(r.min_same_class_distance.is_some());
    }

    #[test]
    fn rejects_bad_labels() {
        assert!(Dataset::new(vec![vec![1.0]], vec![0], 0.5, 0.1).is_err());
        assert!(Dataset::new(vec![vec![1.0]], vec![1, 1], 0.5, 0.1).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let ds = generate_separated(7, 4, 0.5, 0.2, 3).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# d=4 mu=0.5 phi=0.2 n=7\nx1,x2,x3,x4,label\n"));
        let back = Dataset::read_csv(&buf[..]).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn csv_missing_metadata() {
        let text = "x1,x2,x3,label\n0.1,0.2,0.3,1\n";
        assert!(matches!(Dataset::read_csv(text.as_bytes()), Err(Error::Parse(_))));
    }
}
