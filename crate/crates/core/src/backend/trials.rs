use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrialLabel {
    Target,
    Nontarget,
    Unknown,
}

impl FromStr for TrialLabel {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "target" => Ok(Self::Target),
            "nontarget" => Ok(Self::Nontarget),
            "unknown" => Ok(Self::Unknown),
            other => Err(format!("unknown trial label `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    pub label: TrialLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrial {
    pub enroll: String,
    pub test: String,
    pub score: f64,
}

fn fields(line: &str, n: usize, lineno: usize) -> Result<Vec<&str>> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != n {
        return Err(Error::Parse {
            line: lineno,
            reason: format!("expected {n} fields, found {}", f.len()),
        });
    }
    Ok(f)
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

/// `enroll test target|nontarget|unknown`; a missing label means unknown.
pub fn parse_trials(text: &str) -> Result<Vec<Trial>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let label = match f.len() {
            2 => TrialLabel::Unknown,
            3 => f[2].parse().map_err(|reason| Error::Parse { line: i + 1, reason })?,
            n => {
                return Err(Error::Parse {
                    line: i + 1,
                    reason: format!("expected 2 or 3 fields, found {n}"),
                })
            }
        };
        out.push(Trial {
            enroll: f[0].to_string(),
            test: f[1].to_string(),
            label,
        });
    }
    Ok(out)
}

pub fn read_trials(path: impl AsRef<Path>) -> Result<Vec<Trial>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
    parse_trials(&text)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoredTrial>> {
    read_lines(path.as_ref())?
        .into_iter()
        .map(|(i, line)| {
            let f = fields(&line, 3, i)?;
            let score = f[2].parse::<f64>().map_err(|e| Error::Parse {
                line: i,
                reason: e.to_string(),
            })?;
            if !score.is_finite() {
                return Err(Error::Parse {
                    line: i,
                    reason: "score is not finite".into(),
                });
            }
            Ok(ScoredTrial {
                enroll: f[0].to_string(),
                test: f[1].to_string(),
                score,
            })
        })
        .collect()
}

/// One line per trial with six decimals.
pub fn write_scores<W: Write>(mut w: W, scores: &[ScoredTrial]) -> Result<()> {
    for s in scores {
        writeln!(w, "{} {} {:.6}", s.enroll, s.test, s.score)?;
    }
    Ok(())
}

/// Pairs scores with their labels; unknown-label trials are skipped and
/// every labelled trial must have a score.
pub fn join_labels(trials: &[Trial], scores: &[ScoredTrial]) -> Result<Vec<(f64, bool)>> {
    let by_pair: HashMap<(&str, &str), f64> = scores
        .iter()
        .map(|s| ((s.enroll.as_str(), s.test.as_str()), s.score))
        .collect();
    trials
        .iter()
        .filter(|t| t.label != TrialLabel::Unknown)
        .map(|t| {
            by_pair
                .get(&(t.enroll.as_str(), t.test.as_str()))
                .map(|&s| (s, t.label == TrialLabel::Target))
                .ok_or_else(|| Error::input(format!("no score for trial {} {}", t.enroll, t.test)))
        })
        .collect()
}
