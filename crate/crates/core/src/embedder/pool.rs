use nalgebra::{DMatrix, DVector};

pub const VAR_FLOOR: f64 = 1e-10;

/// Mean and floored standard deviation per column, concatenated.
pub fn stats_pool(h: &DMatrix<f64>) -> DVector<f64> {
    let t = h.nrows();
    let uniform = vec![1.0 / t as f64; t];
    weighted_stats(h, &uniform)
}

/// Parameters of the attention scorer `vᵀ tanh(W h + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub v: DVector<f64>,
}

impl Attention {
    pub fn zeros(hidden: usize, dim: usize) -> Self {
        Self {
            w: DMatrix::zeros(hidden, dim),
            b: DVector::zeros(hidden),
            v: DVector::zeros(hidden),
        }
    }

    /// Softmax-normalised frame weights.
    pub fn weights(&self, h: &DMatrix<f64>) -> Vec<f64> {
        let mut hidden = h * self.w.transpose();
        for mut row in hidden.row_iter_mut() {
            for (x, b) in row.iter_mut().zip(self.b.iter()) {
                *x = (*x + b).tanh();
            }
        }
        let scores = hidden * &self.v;
        let max = scores.max();
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }
}

pub fn attentive_stats_pool(h: &DMatrix<f64>, attn: &Attention) -> DVector<f64> {
    weighted_stats(h, &attn.weights(h))
}

// Pairs are summed in sorted order so that any frame permutation gives the
// same bits.
fn weighted_stats(h: &DMatrix<f64>, alpha: &[f64]) -> DVector<f64> {
    let d = h.ncols();
    let mut out = DVector::zeros(2 * d);
    let mut pairs = Vec::with_capacity(h.nrows());
    for (j, col) in h.column_iter().enumerate() {
        pairs.clear();
        pairs.extend(col.iter().copied().zip(alpha.iter().copied()));
        pairs.sort_unstable_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
        let mean: f64 = pairs.iter().map(|(x, a)| a * x).sum();
        let var: f64 = pairs.iter().map(|(x, a)| a * (x - mean) * (x - mean)).sum();
        out[j] = mean;
        out[d + j] = var.max(VAR_FLOOR).sqrt();
    }
    out
}
