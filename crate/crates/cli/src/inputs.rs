use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use spkit::backend::enroll_average;
use spkit::embedder::{read_embeddings, Embedding};
use spkit::uio::{read_data_list, read_labels, read_raw, read_shards, ShardManifest, UtteranceRecord};
use spkit::Error;

use crate::{CliError, CliResult, Source};

pub fn records(source: &Source) -> CliResult<Box<dyn Iterator<Item = spkit::Result<UtteranceRecord>>>> {
    match (&source.shards, &source.data_list) {
        (Some(list), None) => Ok(Box::new(read_shards(&ShardManifest::load(list)?))),
        (None, Some(list)) => Ok(Box::new(read_raw(read_data_list(list)?))),
        _ => Err(CliError::Usage("give exactly one of --shards or --data-list".into())),
    }
}

/// Speaker labels in stream order, without decoding audio where possible.
pub fn speaker_labels(source: &Source) -> CliResult<Vec<String>> {
    match (&source.shards, &source.data_list) {
        (Some(list), None) => Ok(read_labels(&ShardManifest::load(list)?)
            .map(|r| r.map(|(_, spk)| spk))
            .collect::<spkit::Result<_>>()?),
        (None, Some(list)) => Ok(read_data_list(list)?.into_iter().map(|e| e.speaker).collect()),
        _ => Err(CliError::Usage("give exactly one of --shards or --data-list".into())),
    }
}

pub fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::IoAt {
            path: p.to_path_buf(),
            source: e,
        })?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| {
        CliError::Data(Error::IoAt {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| {
        CliError::Data(Error::IoAt {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn parse_error(path: &Path, line: usize, reason: impl Into<String>) -> CliError {
    CliError::Data(Error::InvalidInput(format!("{}:{line}: {}", path.display(), reason.into())))
}

/// Embeddings in file order with a key index.
pub struct EmbeddingTable {
    pub items: Vec<Embedding>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn load(path: &Path) -> CliResult<Self> {
        let items = read_embeddings(open(path)?)?;
        let mut index = HashMap::new();
        for (i, e) in items.iter().enumerate() {
            if index.insert(e.key.clone(), i).is_some() {
                return Err(CliError::Data(Error::DuplicateKey(e.key.clone())));
            }
        }
        Ok(Self { items, index })
    }

    pub fn get(&self, key: &str) -> CliResult<&DVector<f64>> {
        self.index
            .get(key)
            .map(|&i| &self.items[i].vector)
            .ok_or_else(|| CliError::Data(Error::InvalidInput(format!("no embedding for `{key}`"))))
    }
}

/// `key speaker` pairs in file order.
pub fn read_utt2spk(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            [] => continue,
            [k, s] => out.push((k.to_string(), s.to_string())),
            _ => return Err(parse_error(path, i + 1, "expected `<key> <speaker>`")),
        }
    }
    Ok(out)
}

pub fn write_utt2spk<W: Write>(mut w: W, pairs: &[(String, String)]) -> CliResult<()> {
    for (k, s) in pairs {
        writeln!(w, "{k} {s}")?;
    }
    Ok(())
}

/// `model utt1 utt2 ...` lines.
pub fn read_enroll(path: &Path) -> CliResult<HashMap<String, Vec<String>>> {
    let text = read_text(path)?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let mut f = line.split_whitespace();
        let Some(model) = f.next() else { continue };
        let utts: Vec<String> = f.map(str::to_string).collect();
        if utts.is_empty() {
            return Err(parse_error(path, i + 1, format!("model `{model}` lists no utterances")));
        }
        if out.insert(model.to_string(), utts).is_some() {
            return Err(parse_error(path, i + 1, format!("model `{model}` listed twice")));
        }
    }
    Ok(out)
}

/// Resolves a trial side: an enrollment model averages its sessions, any
/// other key is looked up directly.
pub fn resolve(key: &str, table: &EmbeddingTable, enroll: &HashMap<String, Vec<String>>) -> CliResult<DVector<f64>> {
    match enroll.get(key) {
        Some(utts) => {
            let sessions = utts.iter().map(|u| table.get(u).cloned()).collect::<CliResult<Vec<_>>>()?;
            Ok(enroll_average(&sessions)?)
        }
        None => Ok(table.get(key)?.clone()),
    }
}

/// Labelled training data grouped by speaker in first-seen order.
pub fn labelled(table: &EmbeddingTable, utt2spk: &[(String, String)]) -> CliResult<(Vec<String>, Vec<(DVector<f64>, usize)>)> {
    let mut speakers: Vec<String> = Vec::new();
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut data = Vec::with_capacity(utt2spk.len());
    for (utt, spk) in utt2spk {
        let id = *ids.entry(spk.as_str()).or_insert_with(|| {
            speakers.push(spk.clone());
            speakers.len() - 1
        });
        data.push((table.get(utt)?.clone(), id));
    }
    Ok((speakers, data))
}
