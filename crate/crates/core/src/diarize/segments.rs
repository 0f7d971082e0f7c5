use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

const EPS: f64 = 1e-9;

/// A speech region of one recording, in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechSegment {
    pub recording: String,
    pub start: f64,
    pub end: f64,
}

impl SpeechSegment {
    pub fn new(recording: impl Into<String>, start: f64, end: f64) -> Result<Self> {
        let recording = recording.into();
        if !(start.is_finite() && end.is_finite() && 0.0 <= start && start < end) {
            return Err(Error::input(format!(
                "segment of `{recording}` needs 0 <= start < end, got [{start}, {end}]"
            )));
        }
        Ok(Self { recording, start, end })
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

impl fmt::Display for SpeechSegment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:.3} {:.3}", self.recording, self.start, self.end)
    }
}

/// Windowing parameters for cutting speech into embedding segments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowConfig {
    pub window: f64,
    pub shift: f64,
    pub min_len: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window: 1.5,
            shift: 0.75,
            min_len: 0.25,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window > 0.0 && self.shift > 0.0 && self.shift <= self.window) {
            return Err(Error::config("need 0 < shift <= window"));
        }
        if !(self.min_len > 0.0 && self.min_len <= self.window) {
            return Err(Error::config("need 0 < min_len <= window"));
        }
        Ok(())
    }
}

/// Tiles each segment with fixed windows starting every `shift` seconds.
///
/// Windows end at most at the segment end. The uncovered tail becomes a
/// partial window when it is at least `min_len` long; a shorter tail is
/// absorbed by stretching the last full window, so every segment that fits
/// one window is covered completely. Segments shorter than `min_len` are
/// dropped.
pub fn subsegment(sad: &[SpeechSegment], cfg: WindowConfig) -> Result<Vec<SpeechSegment>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for seg in sad {
        let mut windows: Vec<SpeechSegment> = Vec::new();
        let mut k = 0usize;
        loop {
            let s = seg.start + k as f64 * cfg.shift;
            if s + cfg.window > seg.end + EPS {
                break;
            }
            windows.push(SpeechSegment {
                recording: seg.recording.clone(),
                start: s,
                end: (s + cfg.window).min(seg.end),
            });
            k += 1;
        }
        let covered = windows.last().map_or(seg.start, |w| w.end);
        if covered < seg.end - EPS {
            let tail_start = windows.last().map_or(seg.start, |w| w.start + cfg.shift);
            if seg.end - tail_start >= cfg.min_len - EPS {
                windows.push(SpeechSegment {
                    recording: seg.recording.clone(),
                    start: tail_start,
                    end: seg.end,
                });
            } else if let Some(last) = windows.last_mut() {
                last.end = seg.end;
            }
        }
        out.extend(windows);
    }
    Ok(out)
}

/// A labelled region of a diarization output.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSegment {
    pub recording: String,
    pub start: f64,
    pub end: f64,
    pub label: String,
}

/// Turns labelled windows into non-overlapping speaker turns.
///
/// Windows are sorted per recording by start time. Where two consecutive
/// windows overlap, the boundary between them goes to the middle of the
/// overlap; touching regions with the same label are then merged.
pub fn merge_segments(windows: &[SpeechSegment], labels: &[usize]) -> Result<Vec<LabeledSegment>> {
    if windows.len() != labels.len() {
        return Err(Error::input(format!(
            "{} windows but {} labels",
            windows.len(),
            labels.len()
        )));
    }
    let mut by_rec: BTreeMap<&str, Vec<(&SpeechSegment, usize)>> = BTreeMap::new();
    for (w, &l) in windows.iter().zip(labels) {
        by_rec.entry(w.recording.as_str()).or_default().push((w, l));
    }
    let mut out = Vec::new();
    for (rec, mut ws) in by_rec {
        ws.sort_by(|a, b| a.0.start.total_cmp(&b.0.start).then(a.0.end.total_cmp(&b.0.end)));
        let n = ws.len();
        let cut = |i: usize| {
            // boundary between window i and i + 1
            let (a, b) = (ws[i].0, ws[i + 1].0);
            if b.start < a.end {
                0.5 * (b.start + a.end)
            } else {
                a.end
            }
        };
        let mut merged: Vec<LabeledSegment> = Vec::new();
        for i in 0..n {
            let (w, label) = ws[i];
            let start = if i > 0 && ws[i - 1].0.end > w.start { cut(i - 1) } else { w.start };
            let end = if i + 1 < n { cut(i).min(w.end) } else { w.end };
            if end - start <= EPS {
                continue;
            }
            let label = format!("spk{label}");
            match merged.last_mut() {
                Some(prev) if prev.label == label && start <= prev.end + EPS => prev.end = prev.end.max(end),
                _ => merged.push(LabeledSegment {
                    recording: rec.to_string(),
                    start,
                    end,
                    label,
                }),
            }
        }
        out.extend(merged);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seg(s: f64, e: f64) -> SpeechSegment {
        SpeechSegment::new("r", s, e).unwrap()
    }

    fn starts(w: &[SpeechSegment]) -> Vec<f64> {
        w.iter().map(|x| x.start).collect()
    }

    #[test]
    fn one_window_fits_exactly() {
        let w = subsegment(&[seg(0.0, 1.5)], WindowConfig::default()).unwrap();
        assert_eq!(w, vec![seg(0.0, 1.5)]);
    }

    #[test]
    fn three_second_segment() {
        let w = subsegment(&[seg(0.0, 3.0)], WindowConfig::default()).unwrap();
        assert_eq!(starts(&w), vec![0.0, 0.75, 1.5]);
        assert_eq!(w[2].end, 3.0);
    }

    #[test]
    fn tails() {
        // tail of 0.5 s becomes its own window
        let w = subsegment(&[seg(0.0, 2.75)], WindowConfig::default()).unwrap();
        assert_eq!(starts(&w), vec![0.0, 0.75, 1.5]);
        assert_eq!(w[2].end, 2.75);
        // short segment, short tail
        let w = subsegment(&[seg(1.0, 1.2)], WindowConfig::default()).unwrap();
        assert!(w.is_empty());
        let w = subsegment(&[seg(1.0, 2.0)], WindowConfig::default()).unwrap();
        assert_eq!(w, vec![seg(1.0, 2.0)]);
        // 0.1 s past the last full window: stretched
        let w = subsegment(&[seg(0.0, 2.35)], WindowConfig::default()).unwrap();
        assert_eq!(w.last().unwrap().end, 2.35);
    }

    #[test]
    fn windows_cover_random_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let cfg = WindowConfig {
                window: rng.gen_range(0.5..3.0),
                shift: 0.0,
                min_len: 0.0,
            };
            let cfg = WindowConfig {
                shift: rng.gen_range(0.1..=1.0) * cfg.window,
                min_len: rng.gen_range(0.05..=1.0) * cfg.window,
                ..cfg
            };
            let start = rng.gen_range(0.0..100.0);
            let s = seg(start, start + cfg.window * rng.gen_range(1.0..20.0));
            let w = subsegment(std::slice::from_ref(&s), cfg).unwrap();
            assert_eq!(w[0].start, s.start);
            assert_eq!(w.last().unwrap().end, s.end);
            for p in w.windows(2) {
                assert!(p[1].start <= p[0].end + EPS, "gap between windows");
            }
            assert!(w.iter().all(|x| x.start >= s.start && x.end <= s.end));
        }
    }

    #[test]
    fn merge_splits_overlaps_at_midpoint() {
        let ws = vec![seg(0.0, 1.5), seg(0.75, 2.25), seg(1.5, 3.0), seg(2.25, 3.75)];
        let m = merge_segments(&ws, &[0, 0, 1, 1]).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].start, m[0].end), (0.0, 1.875));
        assert_eq!((m[1].start, m[1].end), (1.875, 3.75));
        assert_ne!(m[0].label, m[1].label);
        let m = merge_segments(&ws, &[4, 4, 4, 4]).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].start, m[0].end), (0.0, 3.75));
    }

    #[test]
    fn merge_keeps_gaps() {
        let ws = vec![seg(0.0, 1.0), seg(2.0, 3.0)];
        let m = merge_segments(&ws, &[0, 0]).unwrap();
        assert_eq!(m.len(), 2);
        assert!(merge_segments(&ws, &[0]).is_err());
    }

    #[test]
    fn segment_validation() {
        assert!(SpeechSegment::new("r", 1.0, 1.0).is_err());
        assert!(SpeechSegment::new("r", -1.0, 1.0).is_err());
        assert!(SpeechSegment::new("r", 0.0, f64::NAN).is_err());
    }
}
