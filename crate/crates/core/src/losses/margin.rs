use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Softmax,
    /// Multiplicative angular margin with integer `m`.
    ASoftmax,
    /// Additive cosine margin.
    AmSoftmax,
    /// Additive angular margin.
    AamSoftmax,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [Self::Softmax, Self::ASoftmax, Self::AmSoftmax, Self::AamSoftmax];

    pub fn name(self) -> &'static str {
        match self {
            Self::Softmax => "softmax",
            Self::ASoftmax => "a_softmax",
            Self::AmSoftmax => "am_softmax",
            Self::AamSoftmax => "aam_softmax",
        }
    }
}

impl FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown loss `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginLossConfig {
    pub kind: LossKind,
    pub scale: f64,
    pub margin: f64,
    pub num_classes: usize,
    pub embed_dim: usize,
}

impl MarginLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) {
            return Err(Error::config("scale must be positive"));
        }
        if self.num_classes == 0 || self.embed_dim == 0 {
            return Err(Error::config("num_classes and embed_dim must be positive"));
        }
        check_margin(self.kind, self.margin)
    }
}

fn check_margin(kind: LossKind, m: f64) -> Result<()> {
    match kind {
        LossKind::Softmax => Ok(()),
        LossKind::ASoftmax if m >= 1.0 && m.fract() == 0.0 => Ok(()),
        LossKind::ASoftmax => Err(Error::config(format!("a_softmax margin must be an integer >= 1, got {m}"))),
        _ if (0.0..1.0).contains(&m) => Ok(()),
        _ => Err(Error::config(format!("margin must be in [0, 1), got {m}"))),
    }
}

/// Classifier weights, one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub weights: DMatrix<f64>,
}

impl HeadParams {
    pub fn new(weights: DMatrix<f64>) -> Self {
        Self { weights }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.weights.ncols()
    }

    /// Cosine between `x` and every class row.
    pub fn cosines(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.normalized(x)?.cos)
    }

    fn normalized(&self, x: &DVector<f64>) -> Result<Normalized> {
        if x.len() != self.embed_dim() {
            return Err(Error::input(format!(
                "embedding has {} dims, head expects {}",
                x.len(),
                self.embed_dim()
            )));
        }
        let x_norm = x.norm();
        if !(x_norm > 0.0) || !x_norm.is_finite() {
            return Err(Error::input("embedding has zero or non-finite norm"));
        }
        let x_hat = x / x_norm;
        let mut w_hat = self.weights.clone();
        let mut w_norm = DVector::zeros(self.num_classes());
        for (j, mut row) in w_hat.row_iter_mut().enumerate() {
            let n = row.norm();
            if !(n > 0.0) {
                return Err(Error::input(format!("weight row {j} has zero norm")));
            }
            row /= n;
            w_norm[j] = n;
        }
        let cos = &w_hat * &x_hat;
        Ok(Normalized {
            x_norm,
            x_hat,
            w_hat,
            w_norm,
            cos,
        })
    }

    /// Class with the largest cosine.
    pub fn predict(&self, x: &DVector<f64>) -> Result<usize> {
        Ok(self.cosines(x)?.argmax().0)
    }
}

struct Normalized {
    x_norm: f64,
    x_hat: DVector<f64>,
    w_hat: DMatrix<f64>,
    w_norm: DVector<f64>,
    cos: DVector<f64>,
}

/// Chebyshev polynomials `T_m(c)` and `U_{m-1}(c)`.
fn chebyshev(m: u32, c: f64) -> (f64, f64) {
    let (mut t_prev, mut t) = (1.0, c);
    let (mut u_prev, mut u) = (0.0, 1.0);
    if m == 0 {
        return (1.0, 0.0);
    }
    for _ in 1..m {
        (t_prev, t) = (t, 2.0 * c * t - t_prev);
        (u_prev, u) = (u, 2.0 * c * u - u_prev);
    }
    (t, u)
}

/// Target-class cosine after applying the margin, with its derivative in `c`.
pub fn target_transform(kind: LossKind, c: f64, m: f64) -> (f64, f64) {
    let c = c.clamp(-1.0, 1.0);
    match kind {
        LossKind::Softmax => (c, 1.0),
        LossKind::AmSoftmax => (c - m, 1.0),
        LossKind::AamSoftmax => {
            let (sin_m, cos_m) = m.sin_cos();
            if c > -cos_m {
                // cos(θ + m) while θ + m < π
                let s = (1.0 - c * c).max(0.0).sqrt();
                let d = if s > 0.0 { cos_m + c * sin_m / s } else { cos_m };
                (c * cos_m - s * sin_m, d)
            } else {
                (c - m * sin_m, 1.0)
            }
        }
        LossKind::ASoftmax => {
            let mi = m as u32;
            let theta = c.acos();
            let k = ((mi as f64 * theta / PI).floor() as u32).min(mi - 1);
            let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
            let (t, u) = chebyshev(mi, c);
            (sign * t - 2.0 * k as f64, sign * mi as f64 * u)
        }
    }
}

fn logits_from(norm: &Normalized, label: usize, kind: LossKind, scale: f64, margin: f64) -> (DVector<f64>, f64) {
    let mut z = &norm.cos * scale;
    let (f, df) = target_transform(kind, norm.cos[label], margin);
    z[label] = scale * f;
    (z, df)
}

fn check_label(params: &HeadParams, label: usize) -> Result<()> {
    if label >= params.num_classes() {
        return Err(Error::input(format!("label {label} outside {} classes", params.num_classes())));
    }
    Ok(())
}

/// Scaled logits with the margin applied to the `label` entry. `margin`
/// overrides `cfg.margin` so that schedulers can drive it.
pub fn margin_logits(
    x: &DVector<f64>,
    label: usize,
    params: &HeadParams,
    cfg: &MarginLossConfig,
    margin: f64,
) -> Result<DVector<f64>> {
    check_margin(cfg.kind, margin)?;
    check_label(params, label)?;
    let norm = params.normalized(x)?;
    Ok(logits_from(&norm, label, cfg.kind, cfg.scale, margin).0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_x: DVector<f64>,
    pub grad_w: DMatrix<f64>,
}

/// Cross-entropy over [`margin_logits`] and its exact gradients with respect
/// to the raw embedding and the raw weight matrix.
pub fn loss_and_grad(
    x: &DVector<f64>,
    label: usize,
    params: &HeadParams,
    cfg: &MarginLossConfig,
    margin: f64,
) -> Result<LossGrad> {
    check_margin(cfg.kind, margin)?;
    check_label(params, label)?;
    let norm = params.normalized(x)?;
    let (z, df) = logits_from(&norm, label, cfg.kind, cfg.scale, margin);
    let max = z.max();
    let exps = z.map(|v| (v - max).exp());
    let total = exps.sum();
    let loss = max + total.ln() - z[label];

    // dL/dcos_j
    let mut dcos = exps / total;
    dcos[label] -= 1.0;
    dcos *= cfg.scale;
    dcos[label] *= df;

    let (c, d) = params.weights.shape();
    let mut grad_x = DVector::zeros(d);
    let mut grad_w = DMatrix::zeros(c, d);
    for j in 0..c {
        let g = dcos[j];
        if g == 0.0 {
            continue;
        }
        let w_hat = norm.w_hat.row(j).transpose();
        let cj = norm.cos[j];
        grad_x += (&w_hat - &norm.x_hat * cj) * (g / norm.x_norm);
        let gw = (&norm.x_hat - &w_hat * cj) * (g / norm.w_norm[j]);
        grad_w.row_mut(j).copy_from(&gw.transpose());
    }
    Ok(LossGrad { loss, grad_x, grad_w })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(rng: &mut ChaCha8Rng, c: usize, d: usize) -> (DVector<f64>, HeadParams, usize) {
        let x = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        let w = DMatrix::from_fn(c, d, |_, _| rng.gen_range(-1.0..1.0));
        (x, HeadParams::new(w), rng.gen_range(0..c))
    }

    fn cfg(kind: LossKind, scale: f64, margin: f64, c: usize, d: usize) -> MarginLossConfig {
        MarginLossConfig {
            kind,
            scale,
            margin,
            num_classes: c,
            embed_dim: d,
        }
    }

    #[test]
    fn zero_margin_matches_plain_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let (x, p, y) = instance(&mut rng, 8, 5);
            let plain = margin_logits(&x, y, &p, &cfg(LossKind::Softmax, 30.0, 0.0, 8, 5), 0.0).unwrap();
            for kind in [LossKind::AmSoftmax, LossKind::AamSoftmax] {
                let z = margin_logits(&x, y, &p, &cfg(kind, 30.0, 0.0, 8, 5), 0.0).unwrap();
                assert_eq!(z, plain, "{kind:?}");
            }
        }
    }

    #[test]
    fn aam_aligned_target() {
        let p = HeadParams::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let x = DVector::from_vec(vec![3.0, 0.0]);
        let z = margin_logits(&x, 0, &p, &cfg(LossKind::AamSoftmax, 16.0, 0.5, 2, 2), 0.5).unwrap();
        assert!((z[0] - 16.0 * 0.5f64.cos()).abs() < 1e-12);
        assert_eq!(z[1], 0.0);
    }

    #[test]
    fn aam_matches_direct_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (x, p, y) = instance(&mut rng, 8, 6);
        let c = p.cosines(&x).unwrap()[y];
        let z = margin_logits(&x, y, &p, &cfg(LossKind::AamSoftmax, 1.0, 0.2, 8, 6), 0.2).unwrap();
        assert!((z[y] - (c.acos() + 0.2).cos()).abs() < 1e-9);
    }

    #[test]
    fn a_softmax_psi_is_monotone_and_matches_cos_m_theta() {
        for m in 1..=4u32 {
            let mut prev = f64::INFINITY;
            for i in 0..=1000 {
                let theta = PI * i as f64 / 1000.0;
                let (psi, _) = target_transform(LossKind::ASoftmax, theta.cos(), m as f64);
                assert!(psi <= prev + 1e-9, "m={m} theta={theta}");
                prev = psi;
                let k = ((m as f64 * theta / PI).floor() as u32).min(m - 1);
                let want = (-1f64).powi(k as i32) * (m as f64 * theta).cos() - 2.0 * k as f64;
                assert!((psi - want).abs() < 1e-9);
            }
        }
        assert!(margin_logits(
            &DVector::from_element(2, 1.0),
            0,
            &HeadParams::new(DMatrix::identity(2, 2)),
            &cfg(LossKind::ASoftmax, 1.0, 2.0, 2, 2),
            1.5
        )
        .is_err());
    }

    #[test]
    fn single_class_has_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, p, _) = instance(&mut rng, 1, 4);
        let g = loss_and_grad(&x, 0, &p, &cfg(LossKind::AamSoftmax, 32.0, 0.2, 1, 4), 0.2).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.grad_x.iter().all(|&v| v == 0.0));
        assert!(g.grad_w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn plain_cross_entropy_on_cosines() {
        let p = HeadParams::new(DMatrix::identity(3, 3));
        let x = DVector::from_vec(vec![0.3, -0.2, 0.9]);
        let g = loss_and_grad(&x, 2, &p, &cfg(LossKind::AmSoftmax, 1.0, 0.0, 3, 3), 0.0).unwrap();
        let c: Vec<f64> = x.iter().map(|v| v / x.norm()).collect();
        let want = -(c[2].exp() / c.iter().map(|v| v.exp()).sum::<f64>()).ln();
        assert!((g.loss - want).abs() < 1e-14);
    }

    #[test]
    fn zero_embedding_is_an_error() {
        let p = HeadParams::new(DMatrix::identity(2, 2));
        let z = DVector::zeros(2);
        assert!(loss_and_grad(&z, 0, &p, &cfg(LossKind::Softmax, 1.0, 0.0, 2, 2), 0.0).is_err());
    }

    #[test]
    fn margin_never_raises_target_logit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let (x, p, y) = instance(&mut rng, 5, 4);
            for kind in [LossKind::AmSoftmax, LossKind::AamSoftmax] {
                let c = cfg(kind, 10.0, 0.0, 5, 4);
                let mut prev = f64::INFINITY;
                for m in [0.0, 0.1, 0.3, 0.5, 0.9] {
                    let t = margin_logits(&x, y, &p, &c, m).unwrap()[y];
                    assert!(t <= prev);
                    prev = t;
                }
            }
        }
    }

    #[test]
    fn logits_ignore_embedding_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, p, y) = instance(&mut rng, 6, 8);
        let c = cfg(LossKind::AamSoftmax, 32.0, 0.2, 6, 8);
        let a = margin_logits(&x, y, &p, &c, 0.2).unwrap();
        let b = margin_logits(&(&x * 4.0), y, &p, &c, 0.2).unwrap();
        assert_eq!(a, b);
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        if scale < 1e-12 {
            diff
        } else {
            diff / scale
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let h = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in LossKind::ALL {
            let margin = match kind {
                LossKind::Softmax => 0.0,
                LossKind::ASoftmax => 3.0,
                _ => 0.3,
            };
            for _ in 0..20 {
                let (x, p, y) = instance(&mut rng, 7, 5);
                let c = cfg(kind, 8.0, margin, 7, 5);
                let g = loss_and_grad(&x, y, &p, &c, margin).unwrap();
                let loss = |x: &DVector<f64>, p: &HeadParams| loss_and_grad(x, y, p, &c, margin).unwrap().loss;
                let fd_x: Vec<f64> = (0..5)
                    .map(|i| {
                        let (mut a, mut b) = (x.clone(), x.clone());
                        a[i] += h;
                        b[i] -= h;
                        (loss(&a, &p) - loss(&b, &p)) / (2.0 * h)
                    })
                    .collect();
                assert!(rel_err(g.grad_x.as_slice(), &fd_x) < 1e-5, "{kind:?} x");
                let mut fd_w = Vec::new();
                let mut an_w = Vec::new();
                for r in 0..7 {
                    for col in 0..5 {
                        let (mut a, mut b) = (p.clone(), p.clone());
                        a.weights[(r, col)] += h;
                        b.weights[(r, col)] -= h;
                        fd_w.push((loss(&x, &a) - loss(&x, &b)) / (2.0 * h));
                        an_w.push(g.grad_w[(r, col)]);
                    }
                }
                assert!(rel_err(&an_w, &fd_w) < 1e-5, "{kind:?} w");
            }
        }
    }
}
