use std::io::{BufRead, Write};

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub key: String,
    pub vector: DVector<f64>,
}

/// Writes `key v1 … vD` lines. Values use the shortest representation that
/// parses back to the same `f64`.
pub fn write_embeddings<'a, W, I>(mut w: W, items: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a Embedding>,
{
    for e in items {
        write!(w, "{}", e.key)?;
        for v in e.vector.iter() {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_embeddings<R: BufRead>(r: R) -> Result<Vec<Embedding>> {
    let mut out: Vec<Embedding> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(key) = parts.next() else { continue };
        let values = parts
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
        if values.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                reason: format!("embedding `{key}` has no values"),
            });
        }
        if let Some(first) = out.first() {
            if first.vector.len() != values.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    reason: format!("dimension {} differs from {}", values.len(), first.vector.len()),
                });
            }
        }
        out.push(Embedding {
            key: key.to_string(),
            vector: DVector::from_vec(values),
        });
    }
    Ok(out)
}
