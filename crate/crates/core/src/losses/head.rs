use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::margin::{loss_and_grad, HeadParams, LossKind, MarginLossConfig};
use super::schedule::SchedulerConfig;
use crate::config::{FlatConfig, KeyDoc};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, TensorFile};

pub const LOSS_KEYS: &[KeyDoc] = &[
    KeyDoc { key: "loss", default: "aam_softmax", help: "softmax | a_softmax | am_softmax | aam_softmax" },
    KeyDoc { key: "scale", default: "32", help: "logit scale s" },
    KeyDoc { key: "margin", default: "0.2", help: "margin (integer for a_softmax; scheduled for the others)" },
    KeyDoc { key: "epochs", default: "10", help: "passes over the data" },
    KeyDoc { key: "head_batch_size", default: "32", help: "embeddings per gradient step" },
];

/// Loss, scheduler and segment length of one training stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStage {
    pub loss: MarginLossConfig,
    pub scheduler: SchedulerConfig,
    pub chunk_frames: usize,
}

pub const LMF_MARGIN: f64 = 0.5;
pub const LMF_CHUNK_FRAMES: usize = 600;

/// Large-margin fine-tuning derived from a base stage: margin fixed at 0.5
/// from the first iteration and 6 s segments.
pub fn lmf_config(base: &TrainStage) -> TrainStage {
    let mut out = *base;
    out.loss.margin = LMF_MARGIN;
    out.scheduler.margin_final = LMF_MARGIN;
    out.scheduler.margin_start = 0;
    out.scheduler.margin_end = 0;
    out.chunk_frames = LMF_CHUNK_FRAMES;
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn from_flat(c: &FlatConfig, seed: u64) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            epochs: c.get("epochs", d.epochs)?,
            batch_size: c.get("head_batch_size", d.batch_size)?,
            seed,
        };
        if cfg.batch_size == 0 {
            return Err(Error::config("head_batch_size must be positive"));
        }
        Ok(cfg)
    }

    pub fn steps(&self, n: usize) -> usize {
        self.epochs * n.div_ceil(self.batch_size.max(1))
    }
}

/// Reads loss settings; class count and dimension come from the data.
pub fn loss_from_flat(c: &FlatConfig, num_classes: usize, embed_dim: usize) -> Result<MarginLossConfig> {
    let cfg = MarginLossConfig {
        kind: c.get("loss", LossKind::AamSoftmax)?,
        scale: c.get("scale", 32.0)?,
        margin: c.get("margin", 0.2)?,
        num_classes,
        embed_dim,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    /// Mean loss over each epoch's steps.
    pub epoch_loss: Vec<f64>,
    /// Steps taken in total.
    pub steps: usize,
}

/// Mini-batch gradient descent on the head weights. Each step uses the
/// scheduled learning rate and, for the additive-margin kinds, the scheduled
/// margin; a_softmax keeps its configured integer margin.
pub fn fit_head(
    data: &[(DVector<f64>, usize)],
    init: HeadParams,
    loss: &MarginLossConfig,
    scheduler: &SchedulerConfig,
    fit: &FitConfig,
) -> Result<(HeadParams, FitTrace)> {
    loss.validate()?;
    scheduler.validate()?;
    if init.num_classes() != loss.num_classes || init.embed_dim() != loss.embed_dim {
        return Err(Error::config("head shape does not match the loss configuration"));
    }
    if fit.epochs > 0 && data.is_empty() {
        return Err(Error::input("no training embeddings"));
    }
    let steps = fit.steps(data.len());
    if steps > scheduler.total_iters {
        return Err(Error::config(format!(
            "{steps} steps exceed total_iters = {}",
            scheduler.total_iters
        )));
    }
    let mut params = init;
    let mut rng = ChaCha8Rng::seed_from_u64(fit.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = FitTrace {
        epoch_loss: Vec::with_capacity(fit.epochs),
        steps: 0,
    };
    for _ in 0..fit.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for batch in order.chunks(fit.batch_size) {
            let t = trace.steps;
            let lr = scheduler.lr(t)?;
            let margin = match loss.kind {
                LossKind::ASoftmax | LossKind::Softmax => loss.margin,
                _ => scheduler.margin(t)?,
            };
            let mut grad = DMatrix::zeros(params.num_classes(), params.embed_dim());
            let mut total = 0.0;
            for &i in batch {
                let (x, y) = &data[i];
                let g = loss_and_grad(x, *y, &params, loss, margin)?;
                total += g.loss;
                grad += g.grad_w;
            }
            let n = batch.len() as f64;
            params.weights -= grad * (lr / n);
            epoch_loss += total / n;
            batches += 1;
            trace.steps += 1;
        }
        trace.epoch_loss.push(epoch_loss / batches as f64);
    }
    Ok((params, trace))
}

/// Gaussian initial weights.
pub fn init_head(num_classes: usize, embed_dim: usize, seed: u64) -> HeadParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    HeadParams::new(DMatrix::from_fn(num_classes, embed_dim, |_, _| normal.sample(&mut rng)))
}

/// Fraction of `data` whose nearest class row is the label.
pub fn accuracy(params: &HeadParams, data: &[(DVector<f64>, usize)]) -> Result<f64> {
    let mut correct = 0;
    for (x, y) in data {
        if params.predict(x)? == *y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len().max(1) as f64)
}

impl HeadParams {
    pub fn to_tensors(&self) -> TensorFile {
        let mut f = TensorFile::new();
        f.insert("head.weight", Tensor::from_matrix(&self.weights));
        f
    }

    pub fn from_tensors(f: &TensorFile) -> Result<Self> {
        let t = f.require("head.weight")?;
        if t.shape.len() != 2 {
            return Err(Error::Tensor("head.weight must be rank 2".into()));
        }
        Ok(Self::new(t.to_matrix()?))
    }
}
