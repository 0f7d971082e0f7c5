//! Clustering-based speaker diarization and its scoring.
//!
//! Speech regions are cut into overlapping windows, each window gets an
//! embedding, and the windows of one recording are grouped by spectral
//! clustering on a pruned cosine affinity graph.

mod cluster;
mod der;
mod rttm;
mod segments;

use nalgebra::DVector;

use crate::config::{FlatConfig, KeyDoc};
use crate::error::{Error, Result};

pub use cluster::{affinity, canonical_labels, eigengap, kmeans, laplacian, spectral_cluster, ClusterConfig};
pub use der::{compute_der, hungarian, DerReport};
pub use rttm::{parse_rttm, parse_sad, read_rttm, read_sad, speech_regions, write_rttm, write_sad};
pub use segments::{merge_segments, subsegment, LabeledSegment, SpeechSegment, WindowConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiarizeConfig {
    pub windows: WindowConfig,
    pub affinity_keep: f64,
    pub cluster: ClusterConfig,
    pub collar: f64,
}

impl Default for DiarizeConfig {
    fn default() -> Self {
        Self {
            windows: WindowConfig::default(),
            affinity_keep: 0.3,
            cluster: ClusterConfig::default(),
            collar: 0.25,
        }
    }
}

pub const DIARIZE_KEYS: &[KeyDoc] = &[
    KeyDoc { key: "subseg_window", default: "1.5", help: "embedding window length in seconds" },
    KeyDoc { key: "subseg_shift", default: "0.75", help: "window hop in seconds" },
    KeyDoc { key: "subseg_min", default: "0.25", help: "shortest partial window kept at a segment end" },
    KeyDoc { key: "affinity_keep", default: "0.3", help: "fraction of each affinity row kept before symmetrising" },
    KeyDoc { key: "num_speakers", default: "0", help: "known speaker count; 0 selects it by eigengap" },
    KeyDoc { key: "max_speakers", default: "8", help: "upper bound for the eigengap search" },
    KeyDoc { key: "kmeans_restarts", default: "10", help: "k-means++ restarts" },
];

pub const DER_KEYS: &[KeyDoc] = &[KeyDoc { key: "collar", default: "0.25", help: "unscored seconds around each reference boundary" }];

impl DiarizeConfig {
    pub fn from_flat(c: &FlatConfig) -> Result<Self> {
        let d = Self::default();
        let num: usize = c.get("num_speakers", 0)?;
        let cfg = Self {
            windows: WindowConfig {
                window: c.get("subseg_window", d.windows.window)?,
                shift: c.get("subseg_shift", d.windows.shift)?,
                min_len: c.get("subseg_min", d.windows.min_len)?,
            },
            affinity_keep: c.get("affinity_keep", d.affinity_keep)?,
            cluster: ClusterConfig {
                num_speakers: (num > 0).then_some(num),
                max_speakers: c.get("max_speakers", d.cluster.max_speakers)?,
                restarts: c.get("kmeans_restarts", d.cluster.restarts)?,
                ..d.cluster
            },
            collar: c.get("collar", d.collar)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.windows.validate()?;
        if !(self.affinity_keep > 0.0 && self.affinity_keep <= 1.0) {
            return Err(Error::config("affinity_keep must be in (0, 1]"));
        }
        if self.cluster.max_speakers == 0 || self.cluster.restarts == 0 {
            return Err(Error::config("max_speakers and kmeans_restarts must be positive"));
        }
        if !(self.collar >= 0.0) {
            return Err(Error::config("collar must be non-negative"));
        }
        Ok(())
    }
}

/// `<recording>_<start ms>_<end ms>`, the key under which a window's
/// embedding is stored.
pub fn window_key(w: &SpeechSegment) -> String {
    let ms = |t: f64| (t * 1000.0).round() as u64;
    format!("{}_{:07}_{:07}", w.recording, ms(w.start), ms(w.end))
}

pub fn parse_window_key(key: &str) -> Result<SpeechSegment> {
    let bad = || Error::input(format!("`{key}` is not a `<recording>_<start ms>_<end ms>` window key"));
    let mut parts = key.rsplitn(3, '_');
    let (Some(end), Some(start), Some(rec)) = (parts.next(), parts.next(), parts.next()) else {
        return Err(bad());
    };
    let start: u64 = start.parse().map_err(|_| bad())?;
    let end: u64 = end.parse().map_err(|_| bad())?;
    SpeechSegment::new(rec, start as f64 / 1000.0, end as f64 / 1000.0).map_err(|_| bad())
}

/// Clusters the embedded windows of one recording and returns its turns.
pub fn diarize_windows(
    windows: &[SpeechSegment],
    embeddings: &[DVector<f64>],
    cfg: &DiarizeConfig,
    seed: u64,
) -> Result<Vec<LabeledSegment>> {
    if windows.len() != embeddings.len() {
        return Err(Error::input(format!(
            "{} windows but {} embeddings",
            windows.len(),
            embeddings.len()
        )));
    }
    if let Some(w) = windows.iter().find(|w| w.recording != windows[0].recording) {
        return Err(Error::input(format!(
            "windows span recordings `{}` and `{}`",
            windows[0].recording, w.recording
        )));
    }
    let a = affinity(embeddings, cfg.affinity_keep)?;
    let labels = spectral_cluster(&a, &cfg.cluster, seed)?;
    merge_segments(windows, &labels)
}
