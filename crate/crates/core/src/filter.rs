//! Production path: batch scoring, top-fraction selection, the DFN-style
//! image/paragraph similarity baseline, corpus statistics and a throughput
//! harness.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, SequenceInput};
use crate::error::{Error, Result};
use crate::io::{CaptionSample, ImagePayload, InterleavedDoc, Item, Record, RejectRecord, ScoredRecord};
use crate::packing::{split_words, word_count};
use crate::scalar::Scalar;
use crate::synthgen::{mock_image, Keywords, SLOT_WORDS, WORDS_PER_SLOT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub fraction: f64,
    pub dfn_threshold: f64,
    pub batch_size: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            fraction: 0.30,
            dfn_threshold: 0.15,
            batch_size: 8,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        check_fraction(self.fraction)?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::Config(format!("fraction {f} must lie in (0, 1]")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreOutput {
    /// One entry per scorable record, in corpus order.
    pub scores: Vec<ScoredRecord>,
    pub rejects: Vec<RejectRecord>,
}

/// Scores every record in batches of `batch_size`. Records that cannot be
/// assembled (e.g. over-length images) become rejects. Batches run in
/// parallel; results are merged in input order and do not depend on batch
/// size or worker count.
pub fn score_corpus<S: Scalar>(records: &[Record], model: &Classifier<S>, batch_size: usize) -> Result<ScoreOutput> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let prepared: Vec<(usize, Result<SequenceInput<S>>)> = records
        .par_iter()
        .map(|r| model.prepare(r))
        .enumerate()
        .collect();
    let mut out = ScoreOutput::default();
    let mut ok: Vec<(usize, SequenceInput<S>)> = Vec::with_capacity(records.len());
    for (i, p) in prepared {
        match p {
            Ok(input) => ok.push((i, input)),
            Err(e) => {
                log::warn!("{}: skipped: {e}", records[i].id());
                out.rejects.push(RejectRecord {
                    id: records[i].id().to_string(),
                    reason: e.to_string(),
                });
            }
        }
    }
    let batches: Vec<Vec<S>> = ok
        .par_chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&SequenceInput<S>> = chunk.iter().map(|(_, s)| s).collect();
            model.score_batch(&refs)
        })
        .collect::<Result<_>>()?;
    for ((i, _), score) in ok.iter().zip(batches.into_iter().flatten()) {
        let score = score.as_f64();
        if !score.is_finite() {
            return Err(Error::NonFinite(format!("{}: score {score}", records[*i].id())));
        }
        out.scores.push(ScoredRecord {
            id: records[*i].id().to_string(),
            score,
            modality: records[*i].modality(),
        });
    }
    Ok(out)
}

/// `⌈f·N⌉`, guarded against `f·N` landing a rounding error above an integer.
pub fn retain_count(n: usize, f: f64) -> usize {
    if n == 0 {
        return 0;
    }
    ((f * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

/// Ids of the `⌈f·N⌉` highest scores; ties go to the smaller id.
pub fn top_fraction_ids(scores: &[ScoredRecord], f: f64) -> Result<HashSet<String>> {
    check_fraction(f)?;
    let mut order: Vec<&ScoredRecord> = scores.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    let k = retain_count(scores.len(), f);
    Ok(order[..k].iter().map(|s| s.id.clone()).collect())
}

/// Keeps the top `⌈f·N⌉` records by score, in their original corpus order.
pub fn select_top_fraction<'a>(scores: &[ScoredRecord], records: &'a [Record], f: f64) -> Result<Vec<&'a Record>> {
    let by_id: HashMap<&str, &ScoredRecord> = scores.iter().map(|s| (s.id.as_str(), s)).collect();
    if by_id.len() != scores.len() {
        return Err(Error::invalid("score/record id mismatch: duplicate score ids"));
    }
    if let Some(r) = records.iter().find(|r| !by_id.contains_key(r.id())) {
        return Err(Error::invalid(format!("score/record id mismatch: {} has no score", r.id())));
    }
    if scores.len() != records.len() {
        return Err(Error::invalid(format!(
            "score/record id mismatch: {} scores for {} records",
            scores.len(),
            records.len()
        )));
    }
    let keep = top_fraction_ids(scores, f)?;
    Ok(records.iter().filter(|r| keep.contains(r.id())).collect())
}

/// Score of the `⌈f·N⌉`-th largest element.
pub fn threshold_for_fraction(scores: &[f64], f: f64) -> Result<f64> {
    check_fraction(f)?;
    if scores.is_empty() {
        return Err(Error::invalid("threshold of an empty score list"));
    }
    let mut s = scores.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s[retain_count(s.len(), f) - 1])
}

/// L2-normalized signed feature hashing of lowercased tokens. Texts with no
/// tokens map to the zero vector.
pub fn hashed_text_embedding(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for w in split_words(text) {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for b in w.to_lowercase().bytes() {
            h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
        }
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[(h % dim as u64) as usize] += sign;
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub enum DfnOutcome {
    /// The document with `removed` images taken out.
    Kept { doc: InterleavedDoc, removed: usize },
    /// Every image failed the threshold.
    Dropped { images: usize },
}

/// Keeps an image iff its best cosine similarity with a paragraph of the
/// same document reaches `tau`. Embeddings are expected to be unit vectors.
pub fn dfn_filter_doc(
    doc: &InterleavedDoc,
    text_embed: &dyn Fn(&str) -> Vec<f64>,
    image_embed: &dyn Fn(&ImagePayload) -> Result<Vec<f64>>,
    tau: f64,
) -> Result<DfnOutcome> {
    let paragraphs: Vec<Vec<f64>> = doc.texts().map(text_embed).collect();
    let mut items = Vec::with_capacity(doc.items.len());
    let (mut kept, mut removed) = (0, 0);
    for item in &doc.items {
        match item {
            Item::Text { .. } => items.push(item.clone()),
            Item::Image { image } => {
                let e = image_embed(image)?;
                let best = paragraphs
                    .iter()
                    .map(|p| p.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max);
                if best >= tau {
                    kept += 1;
                    items.push(item.clone());
                } else {
                    removed += 1;
                }
            }
        }
    }
    if kept == 0 {
        return Ok(DfnOutcome::Dropped { images: removed });
    }
    Ok(DfnOutcome::Kept {
        doc: InterleavedDoc {
            id: doc.id.clone(),
            items,
        },
        removed,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DfnSummary {
    pub docs_in: usize,
    pub docs_kept: usize,
    pub docs_dropped: usize,
    pub images_in: usize,
    pub images_kept: usize,
    pub threshold: f64,
}

/// Applies [`dfn_filter_doc`] to a corpus; dropped documents become rejects.
pub fn dfn_filter_corpus(
    docs: &[InterleavedDoc],
    text_embed: &dyn Fn(&str) -> Vec<f64>,
    image_embed: &dyn Fn(&ImagePayload) -> Result<Vec<f64>>,
    tau: f64,
) -> Result<(Vec<InterleavedDoc>, Vec<RejectRecord>, DfnSummary)> {
    let mut kept = Vec::new();
    let mut rejects = Vec::new();
    let mut summary = DfnSummary {
        docs_in: docs.len(),
        threshold: tau,
        ..DfnSummary::default()
    };
    for doc in docs {
        summary.images_in += doc.image_count();
        match dfn_filter_doc(doc, text_embed, image_embed, tau)? {
            DfnOutcome::Kept { doc, .. } => {
                summary.images_kept += doc.image_count();
                kept.push(doc);
            }
            DfnOutcome::Dropped { images } => rejects.push(RejectRecord {
                id: doc.id.clone(),
                reason: format!("all {images} images below similarity threshold {tau}"),
            }),
        }
    }
    summary.docs_kept = kept.len();
    summary.docs_dropped = rejects.len();
    Ok((kept, rejects, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub avg_images_per_doc: f64,
    /// Mean words per record, summed over its text items.
    pub avg_text_len: f64,
    /// Mean of words plus `image_token_equiv` per image.
    pub avg_doc_len: f64,
    pub image_token_equiv: usize,
    pub retained_fraction: f64,
}

/// Averages over records; a caption sample counts as one image plus its text.
pub fn corpus_stats(records: &[Record], image_token_equiv: usize, retained_fraction: f64) -> Result<CorpusStats> {
    if records.is_empty() {
        return Err(Error::invalid("corpus statistics of an empty corpus"));
    }
    if !(0.0..=1.0).contains(&retained_fraction) {
        return Err(Error::invalid("retained_fraction must lie in [0, 1]"));
    }
    let (mut images, mut words) = (0usize, 0usize);
    for r in records {
        match r {
            Record::Caption(c) => {
                images += 1;
                words += word_count(&c.text);
            }
            Record::Interleaved(d) => {
                images += d.image_count();
                words += d.texts().map(word_count).sum::<usize>();
            }
        }
    }
    let n = records.len() as f64;
    Ok(CorpusStats {
        n_docs: records.len(),
        avg_images_per_doc: images as f64 / n,
        avg_text_len: words as f64 / n,
        avg_doc_len: (words + images * image_token_equiv) as f64 / n,
        image_token_equiv,
        retained_fraction,
    })
}

impl CorpusStats {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| Avg. #Img. | Avg. Text Len. | Avg. Doc Len. | Retained |");
        let _ = writeln!(s, "|---|---|---|---|");
        let _ = writeln!(
            s,
            "| {:.2} | {:.1} | {:.1} | {:.1}% |",
            self.avg_images_per_doc,
            self.avg_text_len,
            self.avg_doc_len,
            100.0 * self.retained_fraction
        );
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub corpus_size: usize,
    pub batch_size: usize,
    /// Best wall time over the repeats.
    pub seconds: f64,
    pub samples_per_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub precision: String,
    pub d: usize,
    pub n_layers: usize,
    pub tokens_per_image: usize,
    pub caption_words: usize,
    pub repeats: usize,
    pub threads: usize,
    pub rows: Vec<BenchRow>,
}

/// Uniform-length caption corpus so that cost scales with its size.
pub fn bench_corpus(n: usize, words: usize, side: usize) -> Vec<Record> {
    let mut r = crate::rng::stream(0, "bench-corpus", 0);
    (0..n)
        .map(|i| {
            let kw: Keywords = std::array::from_fn(|s| (i + s) % WORDS_PER_SLOT);
            let text: Vec<&str> = (0..words).map(|j| SLOT_WORDS[j % 4][(i + j) % WORDS_PER_SLOT]).collect();
            Record::Caption(CaptionSample {
                id: format!("bench-{i:07}"),
                image: mock_image(&kw, side, &mut r),
                text: text.join(" "),
            })
        })
        .collect()
}

/// Times `score_corpus` for every (corpus size, batch size) pair, keeping
/// the best of `repeats` runs. Each batch size gets a full warm-up pass and
/// repeats are interleaved across batch sizes, so drift in machine load hits
/// all of them alike.
pub fn throughput_bench<S: Scalar>(
    model: &Classifier<S>,
    sizes: &[usize],
    batches: &[usize],
    repeats: usize,
) -> Result<BenchReport> {
    let t = model.config.encoder.t;
    let side = model.config.encoder.patch_size * t;
    let words = (model.config.max_seq_len.saturating_sub(t * t)).clamp(1, 16);
    let mut rows = Vec::new();
    for &n in sizes {
        let corpus = bench_corpus(n, words, side);
        for &b in batches {
            score_corpus(&corpus, model, b)?;
        }
        let mut best = vec![f64::INFINITY; batches.len()];
        for _ in 0..repeats.max(1) {
            for (&b, best) in batches.iter().zip(best.iter_mut()) {
                let start = Instant::now();
                let out = score_corpus(&corpus, model, b)?;
                *best = best.min(start.elapsed().as_secs_f64());
                if out.scores.len() != n {
                    return Err(Error::invalid("bench corpus produced rejects"));
                }
            }
        }
        for (&b, &secs) in batches.iter().zip(&best) {
            rows.push(BenchRow {
                corpus_size: n,
                batch_size: b,
                seconds: secs,
                samples_per_sec: n as f64 / secs.max(1e-12),
            });
        }
    }
    Ok(BenchReport {
        precision: S::NAME.to_string(),
        d: model.config.d,
        n_layers: model.config.n_layers,
        tokens_per_image: t * t,
        caption_words: words,
        repeats: repeats.max(1),
        threads: rayon::current_num_threads(),
        rows,
    })
}
