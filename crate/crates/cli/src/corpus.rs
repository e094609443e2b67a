//! Input readers shared by the subcommands.

use std::path::Path;

use serde::Deserialize;
use unifilter::io::{read_all, LabeledSample, ReadMode, Record, Validate};
use unifilter::{Error, Result};

/// Precomputed embedding row accepted by `cluster`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRow {
    pub id: String,
    pub embedding: Vec<f64>,
}

/// Any line a corpus file may hold: a labeled sample (its record is used),
/// a bare record, or an embedding row.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum CorpusLine {
    Labeled(LabeledSample),
    Record(Record),
    Embedding(EmbeddingRow),
}

impl CorpusLine {
    fn id(&self) -> &str {
        match self {
            CorpusLine::Labeled(s) => s.id(),
            CorpusLine::Record(r) => r.id(),
            CorpusLine::Embedding(e) => &e.id,
        }
    }
}

impl Validate for CorpusLine {
    fn validate(&self) -> std::result::Result<(), String> {
        match self {
            CorpusLine::Labeled(s) => s.validate(),
            CorpusLine::Record(r) => r.validate(),
            CorpusLine::Embedding(e) => {
                if e.id.is_empty() {
                    return Err("empty id".into());
                }
                if e.embedding.is_empty() || e.embedding.iter().any(|x| !x.is_finite()) {
                    return Err(format!("{}: embedding must be non-empty and finite", e.id));
                }
                Ok(())
            }
        }
    }

    fn record_id(&self) -> Option<&str> {
        Some(self.id())
    }
}

pub fn read_lines(path: &Path, mode: ReadMode) -> Result<Vec<CorpusLine>> {
    read_all(path, mode)
}

/// Records of a corpus or labeled file.
pub fn read_corpus(path: &Path, mode: ReadMode) -> Result<Vec<Record>> {
    read_lines(path, mode)?
        .into_iter()
        .map(|line| match line {
            CorpusLine::Labeled(s) => Ok(s.record),
            CorpusLine::Record(r) => Ok(r),
            CorpusLine::Embedding(e) => Err(Error::Schema(format!(
                "{}: {} holds embedding rows, expected records",
                e.id,
                path.display()
            ))),
        })
        .collect()
}

pub fn read_labeled(path: &Path, mode: ReadMode) -> Result<Vec<LabeledSample>> {
    read_all(path, mode)
}
