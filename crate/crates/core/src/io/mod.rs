//! On-disk record formats shared by every pipeline stage.
//!
//! All corpora are line-delimited JSON: one record per line, UTF-8, LF line
//! endings. Floats are written with shortest round-trip formatting so files
//! produced from identical inputs are byte-identical.

mod jsonl;
mod records;

pub use jsonl::{read_all, read_records, write_records, JsonlReader, ReadMode};
pub use records::{
    CaptionSample, ImagePayload, InterleavedDoc, Item, LabeledSample, Modality, Provenance,
    Record, RejectRecord, ScoredRecord, Validate,
};
