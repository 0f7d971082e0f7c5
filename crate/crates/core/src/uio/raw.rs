use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::wav::decode_pcm16;
use super::UtteranceRecord;
use crate::error::{Error, Result};

/// One line of a `data.list`: `{"key": ..., "wav": ..., "speaker": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataListEntry {
    pub key: String,
    #[serde(rename = "wav")]
    pub wav_path: PathBuf,
    pub speaker: String,
}

pub fn read_data_list(path: impl AsRef<Path>) -> Result<Vec<DataListEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Loads each listed WAV file directly from disk. Errors are per entry: a
/// bad file yields an `Err` for that key and reading continues.
pub fn read_raw<I>(entries: I) -> RawReader<I::IntoIter>
where
    I: IntoIterator<Item = DataListEntry>,
{
    RawReader {
        entries: entries.into_iter(),
    }
}

pub struct RawReader<I> {
    entries: I,
}

impl<I: Iterator<Item = DataListEntry>> Iterator for RawReader<I> {
    type Item = Result<UtteranceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        let entry = self.entries.next()?;
        Some(load_entry(entry))
    }
}

fn load_entry(entry: DataListEntry) -> Result<UtteranceRecord> {
    let bytes = fs::read(&entry.wav_path).map_err(|e| Error::Wav {
        key: entry.key.clone(),
        reason: format!("{}: {e}", entry.wav_path.display()),
    })?;
    let decoded = decode_pcm16(&bytes).map_err(|reason| Error::Wav {
        key: entry.key.clone(),
        reason,
    })?;
    if decoded.channels > 1 {
        log::warn!(
            "{}: {} channels, keeping the first",
            entry.wav_path.display(),
            decoded.channels
        );
    }
    let rec = UtteranceRecord {
        key: entry.key,
        speaker: entry.speaker,
        pcm: decoded.pcm,
        sample_rate: decoded.sample_rate,
    };
    rec.validate()?;
    Ok(rec)
}
