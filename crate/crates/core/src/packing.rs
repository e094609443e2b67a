//! Word-level toy tokenizer and fixed-length multimodal sequence packing.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{Item, Record};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const END_OF_CHUNK: u32 = 2;
pub const IMAGE_PLACEHOLDER: u32 = 3;

const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<|endofchunk|>", "<image>"];
const VOCAB_FORMAT: &str = "unifilter-vocab-v1";

/// Split on whitespace; ASCII punctuation becomes its own token.
pub fn split_words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut start = 0;
        for (i, ch) in chunk.char_indices() {
            if ch.is_ascii_punctuation() {
                if start < i {
                    out.push(&chunk[start..i]);
                }
                out.push(&chunk[i..i + 1]);
                start = i + 1;
            }
        }
        if start < chunk.len() {
            out.push(&chunk[start..]);
        }
    }
    out
}

/// Canonical form compared by tokenizer round trips: tokens joined by one space.
pub fn normalize(text: &str) -> String {
    split_words(text).join(" ")
}

pub fn word_count(text: &str) -> usize {
    split_words(text)
        .iter()
        .filter(|w| !w.chars().all(|c| c.is_ascii_punctuation()))
        .count()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    format: String,
    reserved: ReservedIds,
    tokens: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ReservedIds {
    pad: u32,
    unk: u32,
    end_of_chunk: u32,
    image_placeholder: u32,
}

impl Vocab {
    /// Words seen at least `min_freq` times, most frequent first, ties by
    /// byte order; reserved ids always occupy `0..4`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in texts {
            for w in split_words(t) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_freq.max(1) && !RESERVED.contains(w))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self::from_tokens(
            RESERVED
                .iter()
                .map(|s| s.to_string())
                .chain(words.into_iter().map(|(w, _)| w.to_string()))
                .collect(),
        )
        .expect("reserved prefix is always present")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Schema("vocabulary must start with the reserved tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Schema(format!("duplicate vocabulary entry '{t}'")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = VocabFile {
            format: VOCAB_FORMAT.into(),
            reserved: ReservedIds {
                pad: PAD,
                unk: UNK,
                end_of_chunk: END_OF_CHUNK,
                image_placeholder: IMAGE_PLACEHOLDER,
            },
            tokens: self.tokens.clone(),
        };
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: VocabFile = serde_json::from_str(&text)?;
        if file.format != VOCAB_FORMAT {
            return Err(Error::Schema(format!("unsupported vocabulary format '{}'", file.format)));
        }
        let r = &file.reserved;
        if (r.pad, r.unk, r.end_of_chunk, r.image_placeholder) != (PAD, UNK, END_OF_CHUNK, IMAGE_PLACEHOLDER) {
            return Err(Error::Schema("vocabulary reserved ids differ from this build".into()));
        }
        Self::from_tokens(file.tokens)
    }
}

pub fn tokenize(text: &str, vocab: &Vocab) -> Vec<u32> {
    split_words(text)
        .into_iter()
        .map(|w| vocab.id(w).unwrap_or(UNK))
        .collect()
}

pub fn detokenize(ids: &[u32], vocab: &Vocab) -> String {
    ids.iter()
        .map(|&i| vocab.word(i).unwrap_or(RESERVED[UNK as usize]))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Start of an image placeholder run inside a token stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub pos: usize,
    pub image_id: String,
}

/// Token ids for one record with its image runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatStream {
    pub ids: Vec<u32>,
    pub slots: Vec<Slot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlattenOptions {
    /// Image run length, `t²`.
    pub tokens_per_image: usize,
    /// Also put an end-of-chunk marker before caption images.
    pub caption_end_of_chunk: bool,
}

pub fn image_ref(record_id: &str, k: usize) -> String {
    format!("{record_id}#{k}")
}

fn push_image(out: &mut FlatStream, image_id: String, opts: FlattenOptions, marker: bool) {
    if marker {
        out.ids.push(END_OF_CHUNK);
    }
    out.slots.push(Slot {
        pos: out.ids.len(),
        image_id,
    });
    out.ids.extend(std::iter::repeat_n(IMAGE_PLACEHOLDER, opts.tokens_per_image));
}

/// Documents keep item order with an end-of-chunk id before every image.
/// Captions flatten as image then text.
pub fn flatten_record(record: &Record, vocab: &Vocab, opts: FlattenOptions) -> FlatStream {
    let mut out = FlatStream {
        ids: Vec::new(),
        slots: Vec::new(),
    };
    match record {
        Record::Caption(c) => {
            push_image(&mut out, image_ref(&c.id, 0), opts, opts.caption_end_of_chunk);
            out.ids.extend(tokenize(&c.text, vocab));
        }
        Record::Interleaved(d) => {
            let mut k = 0;
            for item in &d.items {
                match item {
                    Item::Text { text } => out.ids.extend(tokenize(text, vocab)),
                    Item::Image { .. } => {
                        push_image(&mut out, image_ref(&d.id, k), opts, true);
                        k += 1;
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSequence {
    pub tokens: Vec<u32>,
    pub slots: Vec<Slot>,
}

/// Concatenate streams in order and cut them into `context_len` sequences.
///
/// Text tokens may cross sequence boundaries. An image run, together with
/// the end-of-chunk marker in front of it, is atomic: if it does not fit,
/// the current sequence is padded out and the run starts the next one.
pub fn pack(streams: &[FlatStream], context_len: usize, tokens_per_image: usize) -> Result<Vec<PackedSequence>> {
    if context_len <= tokens_per_image + 1 {
        return Err(Error::Config(format!(
            "context length {context_len} must exceed tokens per image + 1 ({})",
            tokens_per_image + 1
        )));
    }
    let mut out = Vec::new();
    let mut cur = PackedSequence {
        tokens: Vec::with_capacity(context_len),
        slots: Vec::new(),
    };
    let flush = |cur: &mut PackedSequence, out: &mut Vec<PackedSequence>| {
        cur.tokens.resize(context_len, PAD);
        out.push(std::mem::replace(
            cur,
            PackedSequence {
                tokens: Vec::with_capacity(context_len),
                slots: Vec::new(),
            },
        ));
    };
    for stream in streams {
        let mut slots = stream.slots.iter().peekable();
        let mut i = 0;
        while i < stream.ids.len() {
            let (unit_len, image) = match slots.peek() {
                Some(s) if s.pos == i => (tokens_per_image, true),
                Some(s) if s.pos == i + 1 && stream.ids[i] == END_OF_CHUNK => (tokens_per_image + 1, true),
                _ => (1, false),
            };
            if unit_len > context_len {
                return Err(Error::invalid("image run longer than the context length"));
            }
            if cur.tokens.len() + unit_len > context_len {
                flush(&mut cur, &mut out);
            }
            if image {
                let slot = slots.next().expect("peeked");
                cur.slots.push(Slot {
                    pos: cur.tokens.len() + unit_len - tokens_per_image,
                    image_id: slot.image_id.clone(),
                });
            }
            cur.tokens.extend_from_slice(&stream.ids[i..i + unit_len]);
            i += unit_len;
        }
    }
    if !cur.tokens.is_empty() {
        flush(&mut cur, &mut out);
    }
    Ok(out)
}
