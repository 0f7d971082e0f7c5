//! Two-covariance PLDA: `x = mu + y + e` with speaker factor `y ~ N(0, Sb)`
//! and residual `e ~ N(0, Sw)`.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::tensor::{Tensor, TensorFile};

#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel {
    pub mu: DVector<f64>,
    pub sigma_b: DMatrix<f64>,
    pub sigma_w: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PldaTrainConfig {
    pub iters: usize,
    /// Added to the diagonal of `Sw` after every update.
    pub ridge: f64,
}

impl Default for PldaTrainConfig {
    fn default() -> Self {
        Self { iters: 10, ridge: 0.0 }
    }
}

fn chol(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| {
        Error::Numerical(format!(
            "{what} is not positive definite; reduce the embedding dimension or set a ridge"
        ))
    })
}

fn log_det(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Sufficient statistics of one speaker.
struct Group {
    n: usize,
    mean: DVector<f64>,
}

struct Stats {
    dim: usize,
    total: usize,
    groups: Vec<Group>,
    /// Sum over speakers of the scatter around each speaker mean.
    within_scatter: DMatrix<f64>,
}

fn stats(groups: &[Vec<DVector<f64>>]) -> Result<Stats> {
    if groups.len() < 2 {
        return Err(Error::input("PLDA needs at least two speakers"));
    }
    let dim = groups
        .iter()
        .flatten()
        .next()
        .map(|v| v.len())
        .ok_or_else(|| Error::input("no embeddings"))?;
    let mut out = Stats {
        dim,
        total: 0,
        groups: Vec::with_capacity(groups.len()),
        within_scatter: DMatrix::zeros(dim, dim),
    };
    for (s, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(Error::input(format!("speaker {s} has no embeddings")));
        }
        if g.iter().any(|v| v.len() != dim || v.iter().any(|x| !x.is_finite())) {
            return Err(Error::input(format!("speaker {s} has a malformed embedding")));
        }
        let mean = g.iter().fold(DVector::zeros(dim), |acc, v| acc + v) / g.len() as f64;
        for v in g {
            let d = v - &mean;
            out.within_scatter.ger(1.0, &d, &d, 1.0);
        }
        out.total += g.len();
        out.groups.push(Group { n: g.len(), mean });
    }
    if dim > out.total {
        return Err(Error::input(format!(
            "dimension {dim} exceeds the {} available embeddings",
            out.total
        )));
    }
    Ok(out)
}

impl PldaModel {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Total data log-likelihood under the model, summed over speakers.
    pub fn log_likelihood(&self, groups: &[Vec<DVector<f64>>]) -> Result<f64> {
        self.log_likelihood_stats(&stats(groups)?)
    }

    fn log_likelihood_stats(&self, st: &Stats) -> Result<f64> {
        let d = st.dim as f64;
        let w_chol = chol(&self.sigma_w, "within-speaker covariance")?;
        let w_logdet = log_det(&w_chol);
        let w_inv = w_chol.inverse();
        let trace_term = w_inv.component_mul(&st.within_scatter).sum();
        let mut per_n: HashMap<usize, (Cholesky<f64, Dyn>, f64)> = HashMap::new();
        let mut ll = -0.5 * trace_term;
        for g in &st.groups {
            if let std::collections::hash_map::Entry::Vacant(e) = per_n.entry(g.n) {
                let c = chol(&(&self.sigma_b + &self.sigma_w / g.n as f64), "marginal covariance")?;
                let ld = log_det(&c);
                e.insert((c, ld));
            }
            let (c, ld) = &per_n[&g.n];
            let diff = &g.mean - &self.mu;
            let quad = diff.dot(&c.solve(&diff));
            let n = g.n as f64;
            ll += -0.5 * (d * (2.0 * PI).ln() + ld + quad)
                - 0.5 * (n - 1.0) * d * (2.0 * PI).ln()
                - 0.5 * (n - 1.0) * w_logdet
                - 0.5 * d * n.ln();
        }
        Ok(ll)
    }

    /// Log-likelihood ratio of same-speaker against different-speaker.
    pub fn score(&self, enroll: &DVector<f64>, test: &DVector<f64>) -> Result<f64> {
        Ok(PldaScorer::new(self)?.score(enroll, test))
    }

    pub fn to_tensors(&self) -> TensorFile {
        let mut f = TensorFile::new();
        f.insert("mu", Tensor::from_vector(&self.mu));
        f.insert("sigma_b", Tensor::from_matrix(&self.sigma_b));
        f.insert("sigma_w", Tensor::from_matrix(&self.sigma_w));
        f
    }

    pub fn from_tensors(f: &TensorFile) -> Result<Self> {
        let mu = f.require("mu")?.to_vector();
        let sigma_b = f.require("sigma_b")?.to_matrix()?;
        let sigma_w = f.require("sigma_w")?.to_matrix()?;
        let d = mu.len();
        if sigma_b.shape() != (d, d) || sigma_w.shape() != (d, d) {
            return Err(Error::Tensor(format!("PLDA covariances must be {d}x{d}")));
        }
        Ok(Self { mu, sigma_b, sigma_w })
    }
}

/// Precomputed quadratic form of the log-likelihood ratio:
/// `llr = eᵀQe + tᵀQt + 2 eᵀPt + k` for centred `e`, `t`.
#[derive(Debug, Clone)]
pub struct PldaScorer {
    mu: DVector<f64>,
    q: DMatrix<f64>,
    p: DMatrix<f64>,
    constant: f64,
}

impl PldaScorer {
    pub fn new(model: &PldaModel) -> Result<Self> {
        let total = &model.sigma_b + &model.sigma_w;
        let tot_chol = chol(&total, "total covariance")?;
        let tot_inv = tot_chol.inverse();
        // Schur complement of the same-speaker joint covariance
        let mut schur = &total - &model.sigma_b * &tot_inv * &model.sigma_b;
        symmetrize(&mut schur);
        let schur_chol = chol(&schur, "same-speaker covariance")?;
        let a = schur_chol.inverse();
        let b = -(&tot_inv * &model.sigma_b * &a);
        let mut q = (&a - &tot_inv) * -0.5;
        symmetrize(&mut q);
        let p = b * -0.5;
        let constant = -0.5 * (log_det(&tot_chol) + log_det(&schur_chol)) + log_det(&tot_chol);
        Ok(Self {
            mu: model.mu.clone(),
            q,
            p,
            constant,
        })
    }

    pub fn score(&self, enroll: &DVector<f64>, test: &DVector<f64>) -> f64 {
        let e = enroll - &self.mu;
        let t = test - &self.mu;
        e.dot(&(&self.q * &e)) + t.dot(&(&self.q * &t)) + 2.0 * e.dot(&(&self.p * &t)) + self.constant
    }
}

fn covariance(vs: impl Iterator<Item = DVector<f64>>, dim: usize) -> (DVector<f64>, DMatrix<f64>) {
    let all: Vec<DVector<f64>> = vs.collect();
    let n = all.len() as f64;
    let mean = all.iter().fold(DVector::zeros(dim), |a, v| a + v) / n;
    let mut cov = DMatrix::zeros(dim, dim);
    for v in &all {
        let d = v - &mean;
        cov.ger(1.0 / n, &d, &d, 1.0);
    }
    (mean, cov)
}

/// Fits the model by EM. Returns the model and the data log-likelihood after
/// initialisation and after every iteration.
pub fn plda_train(groups: &[Vec<DVector<f64>>], cfg: &PldaTrainConfig) -> Result<(PldaModel, Vec<f64>)> {
    let st = stats(groups)?;
    let dim = st.dim;
    let eye = DMatrix::<f64>::identity(dim, dim);
    let (mu, total_cov) = covariance(groups.iter().flatten().cloned(), dim);
    let dof = st.total - st.groups.len();
    let (sigma_w, sigma_b) = if dof >= dim {
        let w = &st.within_scatter / dof as f64;
        let (_, b) = covariance(st.groups.iter().map(|g| g.mean.clone()), dim);
        (w, b)
    } else {
        // not enough repeats to separate the two covariances
        (&total_cov * 0.5, &total_cov * 0.5)
    };
    let mut model = PldaModel {
        mu,
        sigma_b,
        sigma_w: sigma_w + &eye * cfg.ridge,
    };
    let mut trace = vec![model.log_likelihood_stats(&st)?];
    let n_total = st.total as f64;
    let n_spk = st.groups.len() as f64;
    for _ in 0..cfg.iters {
        // E-step: posterior of each speaker factor, grouped by count
        let mut post: HashMap<usize, (DMatrix<f64>, DMatrix<f64>)> = HashMap::new();
        let mut means = Vec::with_capacity(st.groups.len());
        for g in &st.groups {
            if let std::collections::hash_map::Entry::Vacant(e) = post.entry(g.n) {
                let marginal = &model.sigma_b + &model.sigma_w / g.n as f64;
                let c = chol(&marginal, "marginal covariance")?;
                // gain = Sb (Sb + Sw/n)^-1, cov = Sb - gain Sb
                let gain = c.solve(&model.sigma_b).transpose();
                let mut cov = &model.sigma_b - &gain * &model.sigma_b;
                symmetrize(&mut cov);
                e.insert((gain, cov));
            }
            let (gain, _) = &post[&g.n];
            means.push(&model.mu + gain * (&g.mean - &model.mu));
        }
        // M-step
        let mu = means.iter().fold(DVector::zeros(dim), |a, m| a + m) / n_spk;
        let mut sb = DMatrix::zeros(dim, dim);
        let mut sw = st.within_scatter.clone();
        for (g, m) in st.groups.iter().zip(&means) {
            let cov = &post[&g.n].1;
            let dm = m - &mu;
            sb += cov;
            sb.ger(1.0, &dm, &dm, 1.0);
            let dx = &g.mean - m;
            sw.ger(g.n as f64, &dx, &dx, 1.0);
            sw += cov * g.n as f64;
        }
        sb /= n_spk;
        sw /= n_total;
        symmetrize(&mut sb);
        symmetrize(&mut sw);
        model = PldaModel {
            mu,
            sigma_b: sb,
            sigma_w: sw + &eye * cfg.ridge,
        };
        trace.push(model.log_likelihood_stats(&st)?);
    }
    Ok((model, trace))
}
