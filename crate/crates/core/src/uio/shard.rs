use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::wav::{decode_pcm16, encode_pcm16};
use super::{ShardInfo, ShardManifest, UtteranceRecord};
use crate::error::{Error, Result};

const BLOCK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackOptions {
    pub shard_size: usize,
    pub gzip: bool,
}

impl Default for PackOptions {
    fn default() -> Self {
        Self {
            shard_size: 1000,
            gzip: false,
        }
    }
}

/// Writes records into `ceil(N / shard_size)` tar shards under `out_dir`.
///
/// Shards are named `shards_000000.tar` (or `.tar.gz`) in creation order.
/// Entries carry mtime 0 and fixed ownership so output is byte-reproducible.
pub fn pack_shards<I>(records: I, opts: PackOptions, out_dir: impl AsRef<Path>) -> Result<ShardManifest>
where
    I: IntoIterator<Item = UtteranceRecord>,
{
    if opts.shard_size == 0 {
        return Err(Error::input("shard_size must be at least 1"));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io_at(out_dir, e))?;

    let mut manifest = ShardManifest::default();
    let mut seen = HashSet::new();
    let mut current: Option<(PathBuf, tar::Builder<Box<dyn Write>>, usize)> = None;

    for rec in records {
        rec.validate()?;
        if !seen.insert(rec.key.clone()) {
            return Err(Error::DuplicateKey(rec.key));
        }
        if current.as_ref().is_none_or(|c| c.2 == opts.shard_size) {
            if let Some((path, builder, count)) = current.take() {
                finish_shard(builder)?;
                manifest.shards.push(ShardInfo {
                    path,
                    utterances: Some(count),
                });
            }
            let ext = if opts.gzip { "tar.gz" } else { "tar" };
            let path = out_dir.join(format!("shards_{:06}.{ext}", manifest.shards.len()));
            let file = File::create(&path).map_err(|e| Error::io_at(&path, e))?;
            let sink: Box<dyn Write> = if opts.gzip {
                Box::new(GzEncoder::new(BufWriter::new(file), Compression::default()))
            } else {
                Box::new(BufWriter::new(file))
            };
            current = Some((path, tar::Builder::new(sink), 0));
        }
        let (_, builder, count) = current.as_mut().expect("shard open");
        append_entry(builder, &format!("{}.spk", rec.key), rec.speaker.as_bytes())?;
        let wav = encode_pcm16(&rec.pcm, rec.sample_rate)?;
        append_entry(builder, &format!("{}.wav", rec.key), &wav)?;
        *count += 1;
    }
    if let Some((path, builder, count)) = current.take() {
        finish_shard(builder)?;
        manifest.shards.push(ShardInfo {
            path,
            utterances: Some(count),
        });
    }
    Ok(manifest)
}

fn append_entry(builder: &mut tar::Builder<Box<dyn Write>>, name: &str, data: &[u8]) -> Result<()> {
    let mut header = tar::Header::new_ustar();
    header.set_size(data.len() as u64);
    header.set_mode(0o644);
    header.set_mtime(0);
    header.set_uid(0);
    header.set_gid(0);
    header.set_entry_type(tar::EntryType::Regular);
    builder.append_data(&mut header, name, data)?;
    Ok(())
}

fn finish_shard(builder: tar::Builder<Box<dyn Write>>) -> Result<()> {
    let mut sink = builder.into_inner()?;
    sink.flush()?;
    Ok(())
}

/// Streams every record of every shard, in manifest order.
pub fn read_shards(manifest: &ShardManifest) -> ShardReader {
    ShardReader::new(manifest.clone(), false)
}

/// Streams only speaker labels (`key`, `speaker`); WAV payloads are skipped
/// without decoding.
pub fn read_labels(manifest: &ShardManifest) -> impl Iterator<Item = Result<(String, String)>> {
    ShardReader::new(manifest.clone(), true).map(|r| r.map(|rec| (rec.key, rec.speaker)))
}

/// Sequential shard reader. Holds at most one open shard and one record.
pub struct ShardReader {
    shards: std::vec::IntoIter<ShardInfo>,
    current: Option<OpenShard>,
    labels_only: bool,
    failed: bool,
}

struct OpenShard {
    path: PathBuf,
    tar: TarStream<Box<dyn Read>>,
    expected: Option<usize>,
    yielded: usize,
}

impl ShardReader {
    fn new(manifest: ShardManifest, labels_only: bool) -> Self {
        Self {
            shards: manifest.shards.into_iter(),
            current: None,
            labels_only,
            failed: false,
        }
    }

    fn open(info: ShardInfo) -> Result<OpenShard> {
        let file = File::open(&info.path).map_err(|e| Error::io_at(&info.path, e))?;
        let name = info.path.to_string_lossy();
        let reader: Box<dyn Read> = if name.ends_with(".gz") || name.ends_with(".tgz") {
            Box::new(GzDecoder::new(BufReader::new(file)))
        } else {
            Box::new(BufReader::new(file))
        };
        Ok(OpenShard {
            path: info.path,
            tar: TarStream::new(reader),
            expected: info.utterances,
            yielded: 0,
        })
    }

    fn next_from(&mut self) -> Option<Result<UtteranceRecord>> {
        loop {
            if self.current.is_none() {
                let info = self.shards.next()?;
                match Self::open(info) {
                    Ok(s) => self.current = Some(s),
                    Err(e) => return Some(Err(e)),
                }
            }
            let shard = self.current.as_mut().expect("open shard");
            match read_pair(shard, self.labels_only) {
                Ok(Some(rec)) => {
                    shard.yielded += 1;
                    return Some(Ok(rec));
                }
                Ok(None) => {
                    if let Some(n) = shard.expected {
                        if n != shard.yielded {
                            let err = Error::Shard {
                                shard: shard.path.clone(),
                                entry: String::new(),
                                reason: format!("manifest says {n} utterances, found {}", shard.yielded),
                            };
                            self.current = None;
                            return Some(Err(err));
                        }
                    }
                    self.current = None;
                }
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

impl Iterator for ShardReader {
    type Item = Result<UtteranceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = self.next_from();
        if matches!(item, Some(Err(_))) {
            // A corrupt stream cannot be resynchronised.
            self.failed = true;
        }
        item
    }
}

fn read_pair(shard: &mut OpenShard, labels_only: bool) -> Result<Option<UtteranceRecord>> {
    let err = |entry: &str, reason: String| Error::Shard {
        shard: shard.path.clone(),
        entry: entry.to_string(),
        reason,
    };
    let Some(spk_entry) = shard
        .tar
        .next_entry()
        .map_err(|e| err(&e.entry, e.reason))?
    else {
        return Ok(None);
    };
    let Some(key) = spk_entry.name.strip_suffix(".spk").map(str::to_string) else {
        return Err(err(&spk_entry.name, "expected a `.spk` entry".into()));
    };
    let mut label = Vec::new();
    shard
        .tar
        .read_data(&spk_entry, Some(&mut label))
        .map_err(|e| err(&spk_entry.name, e.to_string()))?;
    let speaker = String::from_utf8(label).map_err(|_| err(&spk_entry.name, "label is not utf-8".into()))?;

    let wav_name = format!("{key}.wav");
    let wav_entry = shard
        .tar
        .next_entry()
        .map_err(|e| err(&e.entry, e.reason))?
        .ok_or_else(|| err(&spk_entry.name, format!("missing `{wav_name}` after label")))?;
    if wav_entry.name != wav_name {
        return Err(err(
            &wav_entry.name,
            format!("expected `{wav_name}` to follow `{}`", spk_entry.name),
        ));
    }
    if labels_only {
        shard
            .tar
            .read_data(&wav_entry, None)
            .map_err(|e| err(&wav_entry.name, e.to_string()))?;
        return Ok(Some(UtteranceRecord {
            key,
            speaker,
            pcm: Vec::new(),
            sample_rate: 0,
        }));
    }
    let mut bytes = Vec::with_capacity(wav_entry.size as usize);
    shard
        .tar
        .read_data(&wav_entry, Some(&mut bytes))
        .map_err(|e| err(&wav_entry.name, e.to_string()))?;
    let decoded = decode_pcm16(&bytes).map_err(|reason| err(&wav_entry.name, reason))?;
    if decoded.channels > 1 {
        log::warn!("{}: {} channels, keeping the first", wav_entry.name, decoded.channels);
    }
    Ok(Some(UtteranceRecord {
        key,
        speaker,
        pcm: decoded.pcm,
        sample_rate: decoded.sample_rate,
    }))
}

#[derive(Debug)]
struct EntryHeader {
    name: String,
    size: u64,
}

#[derive(Debug)]
struct TarError {
    entry: String,
    reason: String,
}

/// Forward-only tar parser over any `Read`: ustar headers, GNU long names
/// and pax `path` records. Only the current header is kept in memory.
struct TarStream<R> {
    inner: R,
    done: bool,
}

impl<R: Read> TarStream<R> {
    fn new(inner: R) -> Self {
        Self { inner, done: false }
    }

    fn next_entry(&mut self) -> std::result::Result<Option<EntryHeader>, TarError> {
        let mut long_name: Option<String> = None;
        loop {
            if self.done {
                return Ok(None);
            }
            let mut block = [0u8; BLOCK];
            match read_full(&mut self.inner, &mut block) {
                Ok(0) => {
                    self.done = true;
                    return Ok(None);
                }
                Ok(BLOCK) => {}
                Ok(_) => return Err(tar_err("", "truncated header block")),
                Err(e) => return Err(tar_err("", &e.to_string())),
            }
            if block.iter().all(|&b| b == 0) {
                self.done = true;
                return Ok(None);
            }
            let raw_name = field_str(&block[0..100]);
            verify_checksum(&block).map_err(|r| tar_err(&raw_name, &r))?;
            let size = parse_size(&block[124..136]).map_err(|r| tar_err(&raw_name, &r))?;
            let typeflag = block[156];
            let is_ustar = &block[257..262] == b"ustar";
            let name = match long_name.take() {
                Some(n) => n,
                None => {
                    let prefix = if is_ustar { field_str(&block[345..500]) } else { String::new() };
                    if prefix.is_empty() {
                        raw_name.clone()
                    } else {
                        format!("{prefix}/{raw_name}")
                    }
                }
            };
            match typeflag {
                b'0' | 0 | b'7' => return Ok(Some(EntryHeader { name, size })),
                b'L' => {
                    let mut data = Vec::new();
                    self.read_raw(size, Some(&mut data)).map_err(|e| tar_err(&name, &e.to_string()))?;
                    let end = data.iter().position(|&b| b == 0).unwrap_or(data.len());
                    long_name = Some(
                        String::from_utf8(data[..end].to_vec())
                            .map_err(|_| tar_err(&name, "long name is not utf-8"))?,
                    );
                }
                b'x' => {
                    let mut data = Vec::new();
                    self.read_raw(size, Some(&mut data)).map_err(|e| tar_err(&name, &e.to_string()))?;
                    long_name = pax_path(&data);
                }
                _ => {
                    // directories, global pax headers, links: skip payload
                    self.read_raw(size, None).map_err(|e| tar_err(&name, &e.to_string()))?;
                }
            }
        }
    }

    fn read_data(&mut self, entry: &EntryHeader, out: Option<&mut Vec<u8>>) -> io::Result<()> {
        self.read_raw(entry.size, out)
    }

    /// Consumes `size` payload bytes plus block padding.
    fn read_raw(&mut self, size: u64, out: Option<&mut Vec<u8>>) -> io::Result<()> {
        let padded = size.div_ceil(BLOCK as u64) * BLOCK as u64;
        match out {
            Some(buf) => {
                let start = buf.len();
                buf.resize(start + size as usize, 0);
                self.inner.read_exact(&mut buf[start..])?;
                copy_discard(&mut self.inner, padded - size)
            }
            None => copy_discard(&mut self.inner, padded),
        }
    }
}

fn copy_discard<R: Read>(r: &mut R, n: u64) -> io::Result<()> {
    let copied = io::copy(&mut r.take(n), &mut io::sink())?;
    if copied != n {
        return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated entry"));
    }
    Ok(())
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

fn tar_err(entry: &str, reason: &str) -> TarError {
    TarError {
        entry: entry.to_string(),
        reason: reason.to_string(),
    }
}

fn field_str(field: &[u8]) -> String {
    let end = field.iter().position(|&b| b == 0).unwrap_or(field.len());
    String::from_utf8_lossy(&field[..end]).into_owned()
}

fn parse_size(field: &[u8]) -> std::result::Result<u64, String> {
    if field[0] & 0x80 != 0 {
        // GNU base-256
        let mut v: u64 = (field[0] & 0x7f) as u64;
        for &b in &field[1..] {
            v = v.checked_mul(256).ok_or("size overflow")? + b as u64;
        }
        return Ok(v);
    }
    parse_octal(field)
}

fn parse_octal(field: &[u8]) -> std::result::Result<u64, String> {
    let s = field_str(field);
    let s = s.trim_matches(|c: char| c == ' ' || c == '\0');
    if s.is_empty() {
        return Ok(0);
    }
    u64::from_str_radix(s, 8).map_err(|_| format!("bad octal field `{s}`"))
}

fn verify_checksum(block: &[u8; BLOCK]) -> std::result::Result<(), String> {
    let stored = parse_octal(&block[148..156])?;
    let sum: u64 = block
        .iter()
        .enumerate()
        .map(|(i, &b)| if (148..156).contains(&i) { b' ' as u64 } else { b as u64 })
        .sum();
    if sum != stored {
        return Err(format!("header checksum mismatch (stored {stored}, computed {sum})"));
    }
    Ok(())
}

/// Extracts the `path` record from a pax extended header.
fn pax_path(data: &[u8]) -> Option<String> {
    let text = std::str::from_utf8(data).ok()?;
    let mut rest = text;
    while !rest.is_empty() {
        let (len, _) = rest.split_once(' ')?;
        let n: usize = len.parse().ok()?;
        let record = rest.get(..n)?;
        rest = &rest[n..];
        let body = record.split_once(' ')?.1.trim_end_matches('\n');
        if let Some(p) = body.strip_prefix("path=") {
            return Some(p.to_string());
        }
    }
    None
}
