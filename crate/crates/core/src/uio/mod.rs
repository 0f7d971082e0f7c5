//! Unified IO: pack small utterance files into tar shards and stream them
//! back sequentially, or load raw WAV files listed in a `data.list`.
//!
//! Each utterance becomes two adjacent tar entries, `<key>.spk` holding the
//! speaker label and `<key>.wav` holding a RIFF/PCM16 file, so a reader can
//! pair them in a single pass without holding more than one record.

mod raw;
mod shard;
pub mod wav;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub use raw::{read_data_list, read_raw, DataListEntry, RawReader};
pub use shard::{pack_shards, read_labels, read_shards, PackOptions, ShardReader};

/// One utterance: key, speaker label and mono PCM16 audio.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceRecord {
    pub key: String,
    pub speaker: String,
    pub pcm: Vec<i16>,
    pub sample_rate: u32,
}

impl UtteranceRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::InvalidRecord {
                key: self.key.clone(),
                reason: reason.to_string(),
            })
        };
        if self.key.is_empty() {
            return bad("empty key");
        }
        if self.key.chars().any(char::is_whitespace) {
            return bad("key contains whitespace");
        }
        if self.sample_rate == 0 {
            return bad("sample rate must be positive");
        }
        if self.pcm.is_empty() {
            return bad("empty pcm");
        }
        Ok(())
    }

    pub fn duration_secs(&self) -> f64 {
        self.pcm.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardInfo {
    pub path: PathBuf,
    /// Known when the manifest came from packing; `None` when loaded from a
    /// plain `shards.list`.
    pub utterances: Option<usize>,
}

/// Ordered list of shard files.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShardManifest {
    pub shards: Vec<ShardInfo>,
}

impl ShardManifest {
    pub fn from_paths<I, P>(paths: I) -> Self
    where
        I: IntoIterator<Item = P>,
        P: Into<PathBuf>,
    {
        Self {
            shards: paths
                .into_iter()
                .map(|p| ShardInfo {
                    path: p.into(),
                    utterances: None,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.shards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shards.is_empty()
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.shards.iter().map(|s| s.path.as_path())
    }

    /// Reads a `shards.list`: one shard path per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        Ok(Self::from_paths(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(PathBuf::from),
        ))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io_at(path, e))?;
        for s in &self.shards {
            writeln!(f, "{}", s.path.display())?;
        }
        Ok(())
    }
}

/// Round-robin shard assignment: worker `w` of `n` gets shards `w, w+n, ...`.
pub fn partition(manifest: &ShardManifest, worker: usize, num_workers: usize) -> Result<ShardManifest> {
    if num_workers == 0 || worker >= num_workers {
        return Err(Error::input(format!(
            "worker {worker} out of range for {num_workers} workers"
        )));
    }
    Ok(ShardManifest {
        shards: manifest
            .shards
            .iter()
            .skip(worker)
            .step_by(num_workers)
            .cloned()
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(n: usize) -> ShardManifest {
        ShardManifest::from_paths((0..n).map(|i| format!("s{i}.tar")))
    }

    #[test]
    fn partition_single_worker_is_identity() {
        let m = manifest(10);
        assert_eq!(partition(&m, 0, 1).unwrap(), m);
    }

    #[test]
    fn partition_three_workers() {
        let m = manifest(10);
        let sizes: Vec<_> = (0..3).map(|w| partition(&m, w, 3).unwrap().len()).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        assert!(partition(&m, 3, 3).is_err());
        assert!(partition(&m, 0, 0).is_err());
    }

    #[test]
    fn partition_exhaustive_union_and_disjointness() {
        for n in 0..=20 {
            let m = manifest(n);
            for workers in 1..=5 {
                let mut seen = vec![0usize; n];
                for w in 0..workers {
                    for s in partition(&m, w, workers).unwrap().shards {
                        let idx: usize = s.path.to_str().unwrap()[1..]
                            .trim_end_matches(".tar")
                            .parse()
                            .unwrap();
                        seen[idx] += 1;
                    }
                }
                assert!(seen.iter().all(|&c| c == 1), "n={n} workers={workers}");
            }
        }
    }

    #[test]
    fn record_validation() {
        let mut r = UtteranceRecord {
            key: "a".into(),
            speaker: "s".into(),
            pcm: vec![1],
            sample_rate: 16000,
        };
        assert!(r.validate().is_ok());
        r.key = "a b".into();
        assert!(r.validate().is_err());
        r.key = "a".into();
        r.pcm.clear();
        assert!(r.validate().is_err());
    }
}
