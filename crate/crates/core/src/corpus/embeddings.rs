use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Word,
    Pos,
    Position,
}

impl EmbeddingKind {
    /// Word vectors stay frozen; tag and position vectors are learned.
    pub fn trainable(self) -> bool {
        !matches!(self, EmbeddingKind::Word)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub kind: EmbeddingKind,
    pub rows: Tensor<f64>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn trainable(&self) -> bool {
        self.kind.trainable()
    }

    pub fn row(&self, id: u32) -> &[f64] {
        self.rows.row(id as usize)
    }

    /// Word table with a seeded vector for every entry except PAD, which is zero.
    pub fn seeded(vocab: &Vocabulary, dim: usize, seed: u64) -> Self {
        let mut data = Vec::with_capacity(vocab.len() * dim);
        for (id, w) in vocab.words().iter().enumerate() {
            if id as u32 == PAD {
                data.extend(std::iter::repeat_n(0.0, dim));
            } else {
                data.extend(seeded_vector(seed, w, dim));
            }
        }
        Self {
            kind: EmbeddingKind::Word,
            rows: Tensor::matrix(vocab.len(), dim, data).expect("consistent shape"),
        }
    }
}

/// Deterministic N(0, 1/d) vector for `word`, independent of vocabulary order.
pub fn seeded_vector(seed: u64, word: &str, dim: usize) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(word.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    let normal = Normal::new(0.0, 1.0 / (dim.max(1) as f64).sqrt()).expect("positive std");
    (0..dim).map(|_| normal.sample(&mut rng)).collect()
}

/// Reads a "<V> <d>" text embedding file into a word table for `vocab`.
/// Words missing from the file get `seeded_vector(seed, ..)`; PAD stays zero
/// unless the file lists it.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let file = fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().ok_or_else(|| Error::format(Some(1), "missing header"))??;
    let mut parts = header.split_whitespace();
    let parse = |s: Option<&str>| s.and_then(|s| s.parse::<usize>().ok());
    let (count, file_dim) = match (parse(parts.next()), parse(parts.next())) {
        (Some(v), Some(d)) => (v, d),
        _ => return Err(Error::format(Some(1), format!("bad header {header:?}"))),
    };
    if file_dim != dim {
        return Err(Error::format(
            Some(1),
            format!("embedding dimension {file_dim} does not match configured {dim}"),
        ));
    }

    let mut table = EmbeddingTable::seeded(vocab, dim, seed);
    let mut seen = 0;
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(' ').filter(|s| !s.is_empty());
        let word = fields.next().expect("non-empty line");
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(Some(lineno), format!("bad float: {e}")))?;
        if values.len() != dim {
            return Err(Error::format(
                Some(lineno),
                format!("expected {dim} values for {word:?}, found {}", values.len()),
            ));
        }
        seen += 1;
        if vocab.contains(word) {
            table.rows.row_mut(vocab.id(word) as usize).copy_from_slice(&values);
        }
    }
    if seen != count {
        return Err(Error::format(None, format!("header declares {count} words, file has {seen}")));
    }
    Ok(table)
}

/// Writes `table` in the same format `load_embeddings` reads.
pub fn write_embeddings(path: &Path, vocab: &Vocabulary, table: &EmbeddingTable) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{} {}", table.len(), table.dim())?;
    for (id, word) in vocab.words().iter().enumerate() {
        write!(out, "{word}")?;
        for v in table.row(id as u32) {
            write!(out, " {v:?}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}
