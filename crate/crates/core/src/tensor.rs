//! The `WSTN` tensor container.
//!
//! One file format carries model weights, PLDA parameters, classifier heads,
//! embeddings and dumped feature batches:
//!
//! ```text
//! "WSTN" | version: u32 | count: u32
//! per tensor: name_len: u16 | name: utf-8 | rank: u8 | dims: u32 * rank | f32 * prod(dims)
//! ```
//!
//! All integers and floats are little-endian, payloads row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"WSTN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Tensor(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self {
            shape: vec![v.len()],
            data: v.iter().map(|&x| x as f32).collect(),
        }
    }

    /// Row-major copy of a matrix.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)] as f32);
            }
        }
        Self {
            shape: vec![m.nrows(), m.ncols()],
            data,
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.data.len(), self.data.iter().map(|&x| x as f64))
    }

    /// Interprets a rank-2 tensor as a matrix; rank-1 becomes a single row.
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        let (rows, cols) = match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => {
                return Err(Error::Tensor(format!(
                    "expected rank 1 or 2, got shape {other:?}"
                )))
            }
        };
        Ok(DMatrix::from_row_iterator(
            rows,
            cols,
            self.data.iter().map(|&x| x as f64),
        ))
    }
}

/// An ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    entries: Vec<(String, Tensor)>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces `name`, keeping the original position on replace.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        if let Some(slot) = self.entries.iter_mut().find(|(n, _)| *n == name) {
            slot.1 = tensor;
        } else {
            self.entries.push((name, tensor));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Tensor(format!("missing tensor `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.entries.len() as u32)?;
        for (name, t) in &self.entries {
            let bytes = name.as_bytes();
            if bytes.len() > u16::MAX as usize {
                return Err(Error::Tensor(format!("name too long: {name}")));
            }
            if t.shape.len() > u8::MAX as usize {
                return Err(Error::Tensor(format!("rank too large for `{name}`")));
            }
            w.write_u16::<LittleEndian>(bytes.len() as u16)?;
            w.write_all(bytes)?;
            w.write_u8(t.shape.len() as u8)?;
            for &d in &t.shape {
                let d = u32::try_from(d)
                    .map_err(|_| Error::Tensor(format!("dimension too large in `{name}`")))?;
                w.write_u32::<LittleEndian>(d)?;
            }
            for &x in &t.data {
                w.write_f32::<LittleEndian>(x)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Tensor("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Tensor(format!("unsupported version {version}")));
        }
        let count = r.read_u32::<LittleEndian>()?;
        let mut out = TensorFile::new();
        for _ in 0..count {
            let len = r.read_u16::<LittleEndian>()? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Tensor("tensor name is not utf-8".into()))?;
            let rank = r.read_u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.read_u32::<LittleEndian>()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = vec![0f32; n];
            r.read_f32_into::<LittleEndian>(&mut data)?;
            out.entries.push((name, Tensor { shape, data }));
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io_at(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io_at(path, e))?;
        Self::read_from(BufReader::new(f))
    }
}
