//! JSON-lines readers and writers.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Dataset, QAPair, RawRecord, Review};
use crate::error::{Error, Result};

/// Parses one JSON value per non-blank line. Errors carry the 1-based line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    parse_jsonl(BufReader::new(fs::File::open(path)?))
}

pub fn parse_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::format(Some(i + 1), e.to_string()))?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_raw_corpus(path: &Path) -> Result<Vec<RawRecord>> {
    read_jsonl(path)
}

/// One line of a tokenized dataset file.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum DatasetLine {
    Pair(QAPair),
    Review(Review),
}

/// Writes the tokenized dataset as JSON lines, pairs first, each tagged with
/// `"kind": "pair"` or `"kind": "review"`.
pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    let lines = dataset
        .pairs
        .iter()
        .cloned()
        .map(DatasetLine::Pair)
        .chain(dataset.reviews.iter().cloned().map(DatasetLine::Review));
    for line in lines {
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut dataset = Dataset::default();
    for line in read_jsonl::<DatasetLine>(path)? {
        match line {
            DatasetLine::Pair(p) => dataset.pairs.push(p),
            DatasetLine::Review(r) => dataset.reviews.push(r),
        }
    }
    Ok(dataset)
}
