use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::marker::PhantomData;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::records::Validate;
use crate::error::{Error, Result};

/// How a reader reacts to a malformed line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReadMode {
    /// Yield the error for the bad line and keep going.
    #[default]
    Lenient,
    /// Yield the first error, then end the stream.
    Strict,
}

/// Streaming reader over a JSON-lines file. Yields one item per non-blank
/// line, in file order. Errors carry 1-based line numbers.
pub struct JsonlReader<T, R = BufReader<File>> {
    inner: R,
    mode: ReadMode,
    line_no: usize,
    seen_ids: HashSet<String>,
    done: bool,
    buf: String,
    _marker: PhantomData<T>,
}

impl<T, R: BufRead> JsonlReader<T, R> {
    pub fn new(inner: R, mode: ReadMode) -> Self {
        JsonlReader {
            inner,
            mode,
            line_no: 0,
            seen_ids: HashSet::new(),
            done: false,
            buf: String::new(),
            _marker: PhantomData,
        }
    }
}

impl<T, R> JsonlReader<T, R>
where
    T: DeserializeOwned + Validate,
    R: BufRead,
{
    fn parse_line(&mut self, line: &str) -> Result<T> {
        let record_err = |message: String| Error::Record {
            line: self.line_no,
            message,
        };
        let value: T = serde_json::from_str(line).map_err(|e| record_err(e.to_string()))?;
        value.validate().map_err(record_err)?;
        if let Some(id) = value.record_id() {
            if !self.seen_ids.insert(id.to_string()) {
                return Err(record_err(format!("duplicate id '{id}'")));
            }
        }
        Ok(value)
    }
}

impl<T, R> Iterator for JsonlReader<T, R>
where
    T: DeserializeOwned + Validate,
    R: BufRead,
{
    type Item = Result<T>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            self.buf.clear();
            match self.inner.read_line(&mut self.buf) {
                Ok(0) => {
                    self.done = true;
                    return None;
                }
                Ok(_) => {}
                Err(e) => {
                    self.done = true;
                    return Some(Err(Error::Record {
                        line: self.line_no + 1,
                        message: e.to_string(),
                    }));
                }
            }
            self.line_no += 1;
            let line = std::mem::take(&mut self.buf);
            let trimmed = line.trim_end_matches(['\n', '\r']);
            if trimmed.trim().is_empty() {
                self.buf = line;
                continue;
            }
            let parsed = self.parse_line(trimmed);
            self.buf = line;
            if parsed.is_err() && self.mode == ReadMode::Strict {
                self.done = true;
            }
            return Some(parsed);
        }
    }
}

/// Open `path` for streaming. A missing file is an immediate error.
pub fn read_records<T>(path: impl AsRef<Path>, mode: ReadMode) -> Result<JsonlReader<T>>
where
    T: DeserializeOwned + Validate,
{
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(JsonlReader::new(BufReader::new(file), mode))
}

/// Read a whole file. In lenient mode bad lines are logged and skipped; in
/// strict mode the first bad line is returned as the error.
pub fn read_all<T>(path: impl AsRef<Path>, mode: ReadMode) -> Result<Vec<T>>
where
    T: DeserializeOwned + Validate,
{
    let path = path.as_ref();
    let mut out = Vec::new();
    for item in read_records::<T>(path, mode)? {
        match item {
            Ok(v) => out.push(v),
            Err(e) if mode == ReadMode::Lenient => {
                log::warn!("{}: skipping malformed record: {e}", path.display());
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Write one JSON object per line. Returns the number of records written.
pub fn write_records<'a, T, I>(path: impl AsRef<Path>, records: I) -> Result<usize>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut n = 0;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        n += 1;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(n)
}
