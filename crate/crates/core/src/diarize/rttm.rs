use std::fs;
use std::io::Write;
use std::path::Path;

use super::segments::{LabeledSegment, SpeechSegment};
use crate::error::{Error, Result};

fn number(field: &str, what: &str, line: usize) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| Error::Parse {
        line,
        reason: format!("{what} `{field}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            reason: format!("{what} is not finite"),
        });
    }
    Ok(v)
}

/// Parses `SPEAKER` lines of an RTTM file. Other record types and `;;`
/// comments are skipped.
pub fn parse_rttm(text: &str) -> Result<Vec<LabeledSegment>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with(";;") {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f[0] != "SPEAKER" {
            continue;
        }
        if f.len() < 8 {
            return Err(Error::Parse {
                line: lineno,
                reason: format!("SPEAKER line needs at least 8 fields, found {}", f.len()),
            });
        }
        let start = number(f[3], "onset", lineno)?;
        let dur = number(f[4], "duration", lineno)?;
        if start < 0.0 || dur <= 0.0 {
            return Err(Error::Parse {
                line: lineno,
                reason: "need onset >= 0 and duration > 0".into(),
            });
        }
        out.push(LabeledSegment {
            recording: f[1].to_string(),
            start,
            end: start + dur,
            label: f[7].to_string(),
        });
    }
    Ok(out)
}

pub fn read_rttm(path: impl AsRef<Path>) -> Result<Vec<LabeledSegment>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
    parse_rttm(&text)
}

pub fn write_rttm<W: Write>(mut w: W, segments: &[LabeledSegment]) -> Result<()> {
    for s in segments {
        writeln!(
            w,
            "SPEAKER {} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
            s.recording,
            s.start,
            s.end - s.start,
            s.label
        )?;
    }
    Ok(())
}

/// `<recording> <start> <end>` per line.
pub fn parse_sad(text: &str) -> Result<Vec<SpeechSegment>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(Error::Parse {
                line: i + 1,
                reason: format!("expected `<recording> <start> <end>`, found {} fields", f.len()),
            });
        }
        let (s, e) = (number(f[1], "start", i + 1)?, number(f[2], "end", i + 1)?);
        out.push(SpeechSegment::new(f[0], s, e).map_err(|err| Error::Parse {
            line: i + 1,
            reason: err.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_sad(path: impl AsRef<Path>) -> Result<Vec<SpeechSegment>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
    parse_sad(&text)
}

pub fn write_sad<W: Write>(mut w: W, segments: &[SpeechSegment]) -> Result<()> {
    for s in segments {
        writeln!(w, "{s}")?;
    }
    Ok(())
}

/// Speech regions of a reference: per recording, the union of all turns.
pub fn speech_regions(reference: &[LabeledSegment]) -> Vec<SpeechSegment> {
    let mut turns: Vec<&LabeledSegment> = reference.iter().collect();
    turns.sort_by(|a, b| a.recording.cmp(&b.recording).then(a.start.total_cmp(&b.start)));
    let mut out: Vec<SpeechSegment> = Vec::new();
    for t in turns {
        match out.last_mut() {
            Some(last) if last.recording == t.recording && t.start <= last.end => last.end = last.end.max(t.end),
            _ => out.push(SpeechSegment {
                recording: t.recording.clone(),
                start: t.start,
                end: t.end,
            }),
        }
    }
    out
}
