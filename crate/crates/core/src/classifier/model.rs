use std::ops::Range;

use super::assemble::{truncate, AssembledSequence, Segment, SequenceInput};
use super::config::ModelConfig;
use super::params::ModelParams;
use crate::encoder::FrozenEncoder;
use crate::error::{Error, Result};
use crate::io::{CaptionSample, InterleavedDoc, Item, Record};
use crate::nn::ops::{LayerNormCache, MlpCache};
use crate::nn::{BlockCache, ParamSet, Tensor2D};
use crate::packing::{tokenize, Vocab};
use crate::rng;
use crate::scalar::Scalar;

/// Squared error against a level in `0..=3`, with its derivative.
pub fn mse_loss<S: Scalar>(pred: S, label: u8) -> Result<(S, S)> {
    if label > 3 {
        return Err(Error::invalid(format!("label out of range: {label}")));
    }
    let diff = pred - S::of(label as f64);
    Ok((diff * diff, S::of(2.0) * diff))
}

/// Everything needed to score a record: configuration, vocabulary, the frozen
/// encoder and the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<S> {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub encoder: FrozenEncoder<S>,
    pub params: ModelParams<S>,
}

#[derive(Debug, Clone, Copy)]
enum Source {
    Image(usize),
    Text(u32),
}

#[derive(Debug)]
pub(crate) struct EmbedCache<S> {
    grids: Tensor2D<S>,
    proj: Option<MlpCache<S>>,
    sources: Vec<Source>,
}

#[derive(Debug)]
pub(crate) struct BackboneCache<S> {
    blocks: Vec<BlockCache<S>>,
    last_rows: Vec<usize>,
    final_norm: LayerNormCache<S>,
    h_last: Tensor2D<S>,
}

#[derive(Debug)]
pub(crate) struct BatchCache<S> {
    spans: Vec<Range<usize>>,
    embed: EmbedCache<S>,
    backbone: BackboneCache<S>,
}

/// Row budget for one inference pass through the blocks.
const INFER_ROWS: usize = 64;

fn spans_of<S>(inputs: &[&SequenceInput<S>]) -> Vec<Range<usize>> {
    let mut start = 0;
    inputs
        .iter()
        .map(|s| {
            let r = start..start + s.len();
            start = r.end;
            r
        })
        .collect()
}

impl<S: Scalar> Classifier<S> {
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        if config.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "vocab_size {} does not match vocabulary of {} tokens",
                config.vocab_size,
                vocab.len()
            )));
        }
        config.validate()?;
        let encoder = FrozenEncoder::new(&config.encoder)?;
        let params = ModelParams::init(&config, &mut rng::stream(seed, "classifier-init", 0));
        Ok(Classifier {
            config,
            vocab,
            encoder,
            params,
        })
    }

    /// Caption samples are laid out image first, then text.
    pub fn prepare_caption(&self, sample: &CaptionSample) -> Result<SequenceInput<S>> {
        let ids = tokenize(&sample.text, &self.vocab);
        if ids.is_empty() {
            return Err(Error::invalid(format!("{}: empty text", sample.id)));
        }
        let grid = self.encoder.pooled(&sample.image)?;
        truncate(
            vec![
                Segment::Image { item: 0, image: 0, grid },
                Segment::Text { item: 1, ids },
            ],
            self.config.max_seq_len,
        )
    }

    /// Documents keep their original item order.
    pub fn prepare_interleaved(&self, doc: &InterleavedDoc) -> Result<SequenceInput<S>> {
        if doc.items.is_empty() {
            return Err(Error::invalid(format!("{}: document has zero items", doc.id)));
        }
        let mut segments = Vec::with_capacity(doc.items.len());
        let mut image = 0;
        for (item, it) in doc.items.iter().enumerate() {
            match it {
                Item::Image { image: payload } => {
                    let grid = self.encoder.pooled(payload)?;
                    segments.push(Segment::Image { item, image, grid });
                    image += 1;
                }
                Item::Text { text } => segments.push(Segment::Text {
                    item,
                    ids: tokenize(text, &self.vocab),
                }),
            }
        }
        let input = truncate(segments, self.config.max_seq_len)?;
        if input.is_empty() {
            return Err(Error::invalid(format!("{}: document has no tokens", doc.id)));
        }
        Ok(input)
    }

    pub fn prepare(&self, record: &Record) -> Result<SequenceInput<S>> {
        match record {
            Record::Caption(c) => self.prepare_caption(c),
            Record::Interleaved(d) => self.prepare_interleaved(d),
        }
    }

    pub fn assemble(&self, input: &SequenceInput<S>) -> Result<AssembledSequence<S>> {
        let (embeddings, _) = self.embed(&[input])?;
        Ok(AssembledSequence {
            embeddings,
            segments: input.positions(),
        })
    }

    pub fn assemble_caption(&self, sample: &CaptionSample) -> Result<AssembledSequence<S>> {
        self.assemble(&self.prepare_caption(sample)?)
    }

    pub fn assemble_interleaved(&self, doc: &InterleavedDoc) -> Result<AssembledSequence<S>> {
        self.assemble(&self.prepare_interleaved(doc)?)
    }

    /// Raw, unclamped score read from the last position.
    pub fn forward_score(&self, seq: &AssembledSequence<S>) -> Result<S> {
        let n = seq.len();
        if seq.embeddings.shape() != (n, self.config.d) {
            return Err(Error::shape("assembled embeddings do not match the segment map"));
        }
        let (scores, _) = self.backbone(&seq.embeddings, &[0..n], false)?;
        Ok(scores[0])
    }

    /// Hidden states after the last block, one row per position.
    pub fn hidden_states(&self, seq: &AssembledSequence<S>) -> Result<Tensor2D<S>> {
        let n = seq.len();
        self.check_len(n)?;
        let mut x = seq.embeddings.clone();
        self.add_positions(&mut x, &[0..n]);
        for b in &self.params.blocks {
            x = b.forward(&x, &[0..n], self.config.n_heads)?.0;
        }
        Ok(x)
    }

    pub fn score_record(&self, record: &Record) -> Result<S> {
        let input = self.prepare(record)?;
        Ok(self.score_batch(&[&input])?[0])
    }

    /// Scores a ragged batch; each score depends only on its own sequence.
    pub fn score_batch(&self, inputs: &[&SequenceInput<S>]) -> Result<Vec<S>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let spans = spans_of(inputs);
        let (emb, _) = self.embed(inputs)?;
        // Whole sequences in groups of about INFER_ROWS rows: sequences are
        // independent, and bounded groups keep block temporaries cache-sized
        // however large the batch is.
        let mut scores = Vec::with_capacity(spans.len());
        let mut g = 0;
        while g < spans.len() {
            let start = spans[g].start;
            let mut end = g + 1;
            while end < spans.len() && spans[end].end - start <= INFER_ROWS {
                end += 1;
            }
            let sub = emb.slice_rows(start, spans[end - 1].end);
            let local: Vec<Range<usize>> = spans[g..end].iter().map(|s| s.start - start..s.end - start).collect();
            scores.extend(self.backbone(&sub, &local, false)?.0);
            g = end;
        }
        Ok(scores)
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::invalid("empty sequence"));
        }
        if n > self.config.max_seq_len {
            return Err(Error::invalid(format!(
                "over-length: sequence of {n} exceeds max_seq_len {}",
                self.config.max_seq_len
            )));
        }
        Ok(())
    }

    fn embed(&self, inputs: &[&SequenceInput<S>]) -> Result<(Tensor2D<S>, EmbedCache<S>)> {
        let d = self.config.d;
        let d_v = self.config.encoder.d_v;
        let mut grid_rows = Vec::new();
        let mut sources = Vec::new();
        for input in inputs {
            for seg in &input.segments {
                match seg {
                    Segment::Image { grid, .. } => {
                        if grid.dim() != d_v {
                            return Err(Error::shape("pooled grid width differs from d_v"));
                        }
                        for r in 0..grid.vecs.rows() {
                            sources.push(Source::Image(grid_rows.len() / d_v));
                            grid_rows.extend_from_slice(grid.vecs.row(r));
                        }
                    }
                    Segment::Text { ids, .. } => {
                        for &id in ids {
                            if id as usize >= self.config.vocab_size {
                                return Err(Error::invalid(format!("token id {id} outside vocabulary")));
                            }
                            sources.push(Source::Text(id));
                        }
                    }
                }
            }
        }
        let grids = Tensor2D::from_vec(grid_rows.len() / d_v, d_v, grid_rows)?;
        let (projected, proj) = if grids.rows() > 0 {
            let (y, c) = self.params.projector.forward(&grids)?;
            (y, Some(c))
        } else {
            (Tensor2D::zeros(0, d), None)
        };
        let mut x = Tensor2D::zeros(sources.len(), d);
        for (row, src) in sources.iter().enumerate() {
            let from = match *src {
                Source::Image(g) => projected.row(g),
                Source::Text(id) => self.params.token_embedding.row(id as usize),
            };
            x.row_mut(row).copy_from_slice(from);
        }
        Ok((x, EmbedCache { grids, proj, sources }))
    }

    fn add_positions(&self, x: &mut Tensor2D<S>, spans: &[Range<usize>]) {
        for span in spans {
            for (p, row) in span.clone().enumerate() {
                for (v, &e) in x.row_mut(row).iter_mut().zip(self.params.position_embedding.row(p)) {
                    *v += e;
                }
            }
        }
    }

    /// Block caches are only kept when `keep_caches` is set; inference drops
    /// them as it goes so the working set does not grow with the batch.
    fn backbone(
        &self,
        emb: &Tensor2D<S>,
        spans: &[Range<usize>],
        keep_caches: bool,
    ) -> Result<(Vec<S>, BackboneCache<S>)> {
        for s in spans {
            self.check_len(s.len())?;
        }
        let mut x = emb.clone();
        self.add_positions(&mut x, spans);
        let mut blocks = Vec::with_capacity(self.params.blocks.len());
        for b in &self.params.blocks {
            let (y, c) = b.forward(&x, spans, self.config.n_heads)?;
            x = y;
            if keep_caches {
                blocks.push(c);
            }
        }
        let last_rows: Vec<usize> = spans.iter().map(|s| s.end - 1).collect();
        let mut last = Tensor2D::zeros(last_rows.len(), self.config.d);
        for (i, &r) in last_rows.iter().enumerate() {
            last.row_mut(i).copy_from_slice(x.row(r));
        }
        let (h_last, final_norm) = self.params.final_norm.forward(&last);
        let out = self.params.head.forward(&h_last)?;
        Ok((
            out.into_vec(),
            BackboneCache {
                blocks,
                last_rows,
                final_norm,
                h_last,
            },
        ))
    }

    pub(crate) fn forward_batch(&self, inputs: &[&SequenceInput<S>]) -> Result<(Vec<S>, BatchCache<S>)> {
        let spans = spans_of(inputs);
        let (emb, embed) = self.embed(inputs)?;
        let (scores, backbone) = self.backbone(&emb, &spans, true)?;
        Ok((scores, BatchCache { spans, embed, backbone }))
    }

    /// Accumulates `∂L/∂θ` into `grads` given `∂L/∂score` per sequence.
    pub(crate) fn backward_batch(&self, dscores: &[S], cache: &BatchCache<S>, grads: &mut ModelParams<S>) -> Result<()> {
        let p = &self.params;
        let bc = &cache.backbone;
        let dout = Tensor2D::from_vec(dscores.len(), 1, dscores.to_vec())?;
        let dh = p.head.backward(&bc.h_last, &dout, &mut grads.head);
        let dlast = p.final_norm.backward(&dh, &bc.final_norm, &mut grads.final_norm);
        let mut dx = Tensor2D::zeros(cache.embed.sources.len(), self.config.d);
        for (i, &r) in bc.last_rows.iter().enumerate() {
            dx.row_mut(r).copy_from_slice(dlast.row(i));
        }
        for (l, b) in p.blocks.iter().enumerate().rev() {
            dx = b.backward(&dx, &bc.blocks[l], &cache.spans, self.config.n_heads, &mut grads.blocks[l]);
        }
        for span in &cache.spans {
            for (pos, row) in span.clone().enumerate() {
                for (g, &v) in grads.position_embedding.row_mut(pos).iter_mut().zip(dx.row(row)) {
                    *g += v;
                }
            }
        }
        let mut dproj = Tensor2D::zeros(cache.embed.grids.rows(), self.config.d);
        for (row, src) in cache.embed.sources.iter().enumerate() {
            let dst = match *src {
                Source::Image(g) => dproj.row_mut(g),
                Source::Text(id) => grads.token_embedding.row_mut(id as usize),
            };
            for (g, &v) in dst.iter_mut().zip(dx.row(row)) {
                *g += v;
            }
        }
        if let Some(pc) = &cache.embed.proj {
            p.projector.backward(&dproj, pc, &mut grads.projector);
        }
        Ok(())
    }

    /// Mean squared error over a batch and its gradient with respect to every
    /// trainable tensor.
    pub fn loss_and_grad(&self, inputs: &[&SequenceInput<S>], labels: &[u8]) -> Result<(S, ModelParams<S>)> {
        if inputs.len() != labels.len() || inputs.is_empty() {
            return Err(Error::invalid("batch inputs and labels must be non-empty and aligned"));
        }
        let (scores, cache) = self.forward_batch(inputs)?;
        let inv = S::one() / S::of(inputs.len() as f64);
        let mut loss = S::zero();
        let mut dscores = Vec::with_capacity(scores.len());
        for (&s, &l) in scores.iter().zip(labels) {
            let (v, g) = mse_loss(s, l)?;
            loss += v * inv;
            dscores.push(g * inv);
        }
        let mut grads = self.params.zeros_like();
        self.backward_batch(&dscores, &cache, &mut grads)?;
        Ok((loss, grads))
    }
}
