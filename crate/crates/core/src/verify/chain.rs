use crate::linalg::{matmul, LinearOperator, Matrix, Op, Pattern};

/// Product of masked layer maps `x -> Sigma_r W_r^T x`, applied in order.
/// A step without a mask applies `W_r^T` alone. The product is never formed.
pub struct ChainOperator<'a> {
    steps: Vec<(&'a Matrix, Option<Pattern>)>,
}

impl<'a> ChainOperator<'a> {
    pub fn new(steps: Vec<(&'a Matrix, Option<Pattern>)>) -> Self {
        assert!(!steps.is_empty(), "chain needs at least one step");
        for w in steps.windows(2) {
            assert_eq!(w[0].0.cols(), w[1].0.rows(), "chain steps do not compose");
        }
        for (w, mask) in &steps {
            if let Some(m) = mask {
                assert_eq!(m.len(), w.cols(), "mask length");
            }
        }
        Self { steps }
    }

    /// Transposed product applied to every column of `y` at once.
    pub fn apply_t_columns(&self, y: &Matrix) -> Matrix {
        let mut cur = y.clone();
        for (w, mask) in self.steps.iter().rev() {
            if let Some(mask) = mask {
                mask_rows(&mut cur, mask);
            }
            cur = matmul(w, Op::N, &cur, Op::N);
        }
        cur
    }
}

fn mask_rows(m: &mut Matrix, mask: &Pattern) {
    let cols = m.cols();
    for (r, chunk) in m.as_mut_slice().chunks_mut(cols).enumerate() {
        if !mask[r] {
            chunk.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

fn mask_vec(x: &mut [f64], mask: &Pattern) {
    for (v, on) in x.iter_mut().zip(mask.iter()) {
        if !*on {
            *v = 0.0;
        }
    }
}

impl LinearOperator for ChainOperator<'_> {
    fn nrows(&self) -> usize {
        self.steps.last().unwrap().0.cols()
    }

    fn ncols(&self) -> usize {
        self.steps[0].0.rows()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (w, mask) in &self.steps {
            cur = w.matvec_t(&cur);
            if let Some(mask) = mask {
                mask_vec(&mut cur, mask);
            }
        }
        cur
    }

    fn apply_t(&self, y: &[f64]) -> Vec<f64> {
        let mut cur = y.to_vec();
        for (w, mask) in self.steps.iter().rev() {
            if let Some(mask) = mask {
                mask_vec(&mut cur, mask);
            }
            cur = w.matvec(&cur);
        }
        cur
    }
}

/// `sup { <u, a> : |a|_2 = 1, |a|_0 <= s }`, the norm of the `s` largest
/// entries of `u` in magnitude.
pub fn top_s_norm(u: &[f64], s: usize) -> f64 {
    let s = s.min(u.len());
    if s == 0 {
        return 0.0;
    }
    let mut sq: Vec<f64> = u.iter().map(|v| v * v).collect();
    if s < sq.len() {
        sq.select_nth_unstable_by(s - 1, |a, b| b.total_cmp(a));
    }
    sq[..s].iter().sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, spectral_norm_default};
    use crate::rng::Rng;
    use approx::assert_relative_eq;

    fn dense(op: &ChainOperator) -> Matrix {
        let mut out = Matrix::zeros(op.nrows(), op.ncols());
        for c in 0..op.ncols() {
            let mut e = vec![0.0; op.ncols()];
            e[c] = 1.0;
            for (r, v) in op.apply(&e).into_iter().enumerate() {
                out.set(r, c, v);
            }
        }
        out
    }

    #[test]
    fn chain_matches_dense_product() {
        let mut rng = Rng::new(2);
        let w1 = gaussian_matrix(4, 6, 1.0, &mut rng).unwrap();
        let w2 = gaussian_matrix(6, 5, 1.0, &mut rng).unwrap();
        let mask: Pattern = [true, false, true, true, false, true].iter().copied().collect();
        let op = ChainOperator::new(vec![(&w1, Some(mask.clone())), (&w2, None)]);
        let d = dense(&op);
        // W2^T diag(mask) W1^T
        let mut masked = w1.transpose();
        for r in 0..6 {
            if !mask[r] {
                for c in 0..4 {
                    masked.set(r, c, 0.0);
                }
            }
        }
        let want = matmul(&w2, Op::T, &masked, Op::N);
        for (a, b) in d.as_slice().iter().zip(want.as_slice()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        let y = vec![0.3, -1.0, 2.0, 0.5, 0.1];
        let t = op.apply_t(&y);
        let want_t = d.matvec_t(&y);
        for (a, b) in t.iter().zip(&want_t) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        let ym = Matrix::from_vec(5, 1, y).unwrap();
        let cols = op.apply_t_columns(&ym);
        for (a, b) in cols.as_slice().iter().zip(&want_t) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        let est = crate::linalg::power_iteration(&op, None, 1e-12, 10_000).unwrap();
        assert_relative_eq!(est.sigma, spectral_norm_default(&d).unwrap(), max_relative = 1e-8);
    }

    #[test]
    fn top_s_examples() {
        let u = [3.0, -4.0, 1.0, 0.0];
        assert_eq!(top_s_norm(&u, 1), 4.0);
        assert_eq!(top_s_norm(&u, 2), 5.0);
        assert_relative_eq!(top_s_norm(&u, 10), 26f64.sqrt());
        assert_eq!(top_s_norm(&u, 0), 0.0);
    }
}
