use crate::encoder::PatchGrid;
use crate::error::{Error, Result};
use crate::nn::Tensor2D;

/// Where one position of an assembled sequence came from. `item` indexes the
/// record's items; a caption sample counts as `[image, text]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    Image { item: usize, image: usize, token: usize },
    Text { item: usize, token: usize, id: u32 },
}

impl Position {
    pub fn is_image(&self) -> bool {
        matches!(self, Position::Image { .. })
    }

    pub fn item(&self) -> usize {
        match *self {
            Position::Image { item, .. } | Position::Text { item, .. } => item,
        }
    }
}

/// One record after the frozen stages: pooled image grids and token ids, in
/// item order, already truncated to fit the context.
#[derive(Debug, Clone, PartialEq)]
pub enum Segment<S> {
    Image { item: usize, image: usize, grid: PatchGrid<S> },
    Text { item: usize, ids: Vec<u32> },
}

impl<S> Segment<S> {
    pub fn len(&self) -> usize {
        match self {
            Segment::Image { grid, .. } => grid.h * grid.w,
            Segment::Text { ids, .. } => ids.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceInput<S> {
    pub segments: Vec<Segment<S>>,
    /// Text tokens dropped by truncation.
    pub truncated: usize,
}

impl<S> SequenceInput<S> {
    pub fn len(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn positions(&self) -> Vec<Position> {
        let mut out = Vec::with_capacity(self.len());
        for seg in &self.segments {
            match seg {
                Segment::Image { item, image, grid } => {
                    out.extend((0..grid.h * grid.w).map(|token| Position::Image {
                        item: *item,
                        image: *image,
                        token,
                    }))
                }
                Segment::Text { item, ids } => out.extend(ids.iter().enumerate().map(|(token, &id)| {
                    Position::Text {
                        item: *item,
                        token,
                        id,
                    }
                })),
            }
        }
        out
    }
}

/// Keeps every image token and trims text from the right until the sequence
/// fits. Text segments emptied by the trim are dropped.
pub(crate) fn truncate<S>(segments: Vec<Segment<S>>, max_seq_len: usize) -> Result<SequenceInput<S>> {
    let image_tokens: usize = segments
        .iter()
        .filter(|s| matches!(s, Segment::Image { .. }))
        .map(Segment::len)
        .sum();
    if image_tokens > max_seq_len {
        return Err(Error::invalid(format!(
            "over-length: {image_tokens} image tokens exceed max_seq_len {max_seq_len}"
        )));
    }
    let mut budget = max_seq_len - image_tokens;
    let mut truncated = 0;
    let mut kept = Vec::with_capacity(segments.len());
    for seg in segments {
        match seg {
            Segment::Text { item, mut ids } => {
                let keep = ids.len().min(budget);
                truncated += ids.len() - keep;
                budget -= keep;
                ids.truncate(keep);
                if !ids.is_empty() {
                    kept.push(Segment::Text { item, ids });
                }
            }
            image => kept.push(image),
        }
    }
    Ok(SequenceInput {
        segments: kept,
        truncated,
    })
}

/// Input embeddings (before position embeddings) plus provenance per row.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledSequence<S> {
    pub embeddings: Tensor2D<S>,
    pub segments: Vec<Position>,
}

impl<S> AssembledSequence<S> {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Positions `start..end` occupied by the `k`-th image.
    pub fn image_span(&self, k: usize) -> Option<std::ops::Range<usize>> {
        let idx: Vec<usize> = self
            .segments
            .iter()
            .enumerate()
            .filter(|(_, p)| matches!(p, Position::Image { image, .. } if *image == k))
            .map(|(i, _)| i)
            .collect();
        Some(*idx.first()?..*idx.last()? + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(t: usize) -> PatchGrid<f64> {
        PatchGrid::new(t, t, Tensor2D::zeros(t * t, 2)).unwrap()
    }

    #[test]
    fn truncation_trims_text_from_the_right() {
        let segs = vec![
            Segment::Text { item: 0, ids: vec![5, 6, 7] },
            Segment::Image { item: 1, image: 0, grid: grid(2) },
            Segment::Text { item: 2, ids: vec![8, 9] },
        ];
        let s = truncate(segs.clone(), 9).unwrap();
        assert_eq!(s.len(), 9);
        assert_eq!(s.truncated, 0);
        let s = truncate(segs.clone(), 6).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(s.truncated, 3);
        assert_eq!(s.segments.len(), 2);
        let s = truncate(segs.clone(), 4).unwrap();
        assert_eq!(s.segments.len(), 1);
        assert!(truncate(segs, 3).unwrap_err().to_string().contains("over-length"));
    }

    #[test]
    fn positions_cover_every_row() {
        let s = truncate(
            vec![
                Segment::Text { item: 0, ids: vec![5, 6, 7] },
                Segment::Image { item: 1, image: 0, grid: grid(4) },
                Segment::Text { item: 2, ids: vec![8, 9] },
            ],
            64,
        )
        .unwrap();
        let pos = s.positions();
        assert_eq!(pos.len(), 21);
        assert!(pos[3..19].iter().all(Position::is_image));
        assert!(!pos[2].is_image() && !pos[19].is_image());
    }
}
