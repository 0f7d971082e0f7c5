//! Scoring back-ends and verification metrics.

mod asnorm;
mod metrics;
mod plda;
mod trials;

use nalgebra::DVector;

use crate::config::{FlatConfig, KeyDoc};
use crate::error::{Error, Result};

pub use asnorm::{asnorm_score, top_n_stats, STD_FLOOR};
pub use metrics::{eer, min_dcf, roc, DcfParams, Eer, MinDcf, Roc, RocPoint};
pub use plda::{plda_train, PldaModel, PldaScorer, PldaTrainConfig};
pub use trials::{join_labels, parse_trials, read_scores, read_trials, write_scores, ScoredTrial, Trial, TrialLabel};

pub const PLDA_KEYS: &[KeyDoc] = &[
    KeyDoc { key: "plda_iters", default: "10", help: "EM iterations" },
    KeyDoc { key: "plda_ridge", default: "0", help: "added to the diagonal of the within-speaker covariance" },
    KeyDoc { key: "plda_length_norm", default: "true", help: "length-normalise embeddings before PLDA" },
];

pub const ASNORM_KEYS: &[KeyDoc] = &[KeyDoc { key: "asnorm_top_n", default: "300", help: "cohort scores kept per trial side" }];

pub const METRIC_KEYS: &[KeyDoc] = &[
    KeyDoc { key: "p_target", default: "0.01", help: "target prior of the detection cost" },
    KeyDoc { key: "c_miss", default: "1", help: "cost of a miss" },
    KeyDoc { key: "c_fa", default: "1", help: "cost of a false accept" },
];

impl PldaTrainConfig {
    pub fn from_flat(c: &FlatConfig) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            iters: c.get("plda_iters", d.iters)?,
            ridge: c.get("plda_ridge", d.ridge)?,
        };
        if !(cfg.ridge >= 0.0) {
            return Err(Error::config("plda_ridge must be non-negative"));
        }
        Ok(cfg)
    }
}

pub fn plda_length_norm(c: &FlatConfig) -> Result<bool> {
    c.get_bool("plda_length_norm", true)
}

impl DcfParams {
    pub fn from_flat(c: &FlatConfig) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            p_target: c.get("p_target", d.p_target)?,
            c_miss: c.get("c_miss", d.c_miss)?,
            c_fa: c.get("c_fa", d.c_fa)?,
        })
    }
}

/// Input transform applied before PLDA training and scoring.
pub fn plda_input(v: &DVector<f64>, length_norm: bool) -> Result<DVector<f64>> {
    if length_norm {
        length_normalize(v)
    } else {
        Ok(v.clone())
    }
}

/// Cosine similarity; both vectors must be non-zero.
pub fn cosine_score(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::input(format!("dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    let (na, nb) = (a.norm_squared(), b.norm_squared());
    if !(na > 0.0 && nb > 0.0) {
        return Err(Error::input("cosine of a zero vector"));
    }
    // one square root keeps cos(x, x) at exactly 1
    let denom = if (na * nb).is_finite() && na * nb > 0.0 {
        (na * nb).sqrt()
    } else {
        na.sqrt() * nb.sqrt()
    };
    Ok((a.dot(b) / denom).clamp(-1.0, 1.0))
}

pub fn length_normalize(v: &DVector<f64>) -> Result<DVector<f64>> {
    let n = v.norm();
    if !(n > 0.0) {
        return Err(Error::input("cannot normalise a zero vector"));
    }
    Ok(v / n)
}

/// Mean of the sessions, L2-normalised.
pub fn enroll_average(sessions: &[DVector<f64>]) -> Result<DVector<f64>> {
    let first = sessions.first().ok_or_else(|| Error::input("no enrollment sessions"))?;
    if sessions.iter().any(|s| s.len() != first.len()) {
        return Err(Error::input("enrollment sessions differ in dimension"));
    }
    let mean = sessions.iter().fold(DVector::zeros(first.len()), |a, s| a + s) / sessions.len() as f64;
    if mean.norm() < 1e-12 * sessions.iter().map(|s| s.norm()).fold(0.0, f64::max) {
        return Err(Error::input("enrollment mean is zero"));
    }
    length_normalize(&mean)
}
