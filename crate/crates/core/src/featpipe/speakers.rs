use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Speaker label to contiguous class id, assigned in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpeakerTable {
    ids: HashMap<String, usize>,
    names: Vec<String>,
}

impl SpeakerTable {
    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut t = Self::default();
        for l in labels {
            let l = l.as_ref();
            if !t.ids.contains_key(l) {
                t.ids.insert(l.to_string(), t.names.len());
                t.names.push(l.to_string());
            }
        }
        t
    }

    pub fn id(&self, label: &str) -> Result<usize> {
        self.ids
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownSpeaker(label.to_string()))
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// `spk2id` text file: `<label> <id>` per line, ids in order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io_at(path, e))?;
        for (i, n) in self.names.iter().enumerate() {
            writeln!(f, "{n} {i}")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut it = line.split_whitespace();
            let (Some(name), Some(id), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::Parse {
                    line: i + 1,
                    reason: "expected `<label> <id>`".into(),
                });
            };
            let id: usize = id.parse().map_err(|_| Error::Parse {
                line: i + 1,
                reason: format!("bad id `{id}`"),
            })?;
            rows.push((id, name.to_string()));
        }
        rows.sort();
        if rows.iter().enumerate().any(|(i, (id, _))| *id != i) {
            return Err(Error::config("spk2id ids must be exactly 0..N-1"));
        }
        Ok(Self::from_labels(rows.into_iter().map(|(_, n)| n)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn first_seen_order() {
        let t = SpeakerTable::from_labels(["a", "b", "a", "c", "b"]);
        assert_eq!((t.id("a").unwrap(), t.id("b").unwrap(), t.id("c").unwrap()), (0, 1, 2));
        assert!(matches!(t.id("zz"), Err(Error::UnknownSpeaker(l)) if l == "zz"));
        let single = SpeakerTable::from_labels(["x", "x", "x"]);
        assert_eq!(single.len(), 1);
        assert_eq!(single.id("x").unwrap(), 0);
    }

    #[test]
    fn ids_are_contiguous_for_random_labels() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let labels: Vec<String> = (0..rng.gen_range(1..60))
                .map(|_| format!("spk{}", rng.gen_range(0..25)))
                .collect();
            let t = SpeakerTable::from_labels(&labels);
            let distinct: std::collections::BTreeSet<_> = labels.iter().collect();
            let ids: std::collections::BTreeSet<_> = labels.iter().map(|l| t.id(l).unwrap()).collect();
            assert_eq!(ids, (0..distinct.len()).collect());
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("spk2id");
        let t = SpeakerTable::from_labels(["q", "r", "s"]);
        t.save(&p).unwrap();
        assert_eq!(SpeakerTable::load(&p).unwrap(), t);
    }
}
