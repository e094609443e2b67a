use serde::{Deserialize, Serialize};

use crate::synthgen::QualityLabel;

/// Record-level invariant check run after deserialization.
pub trait Validate {
    fn validate(&self) -> Result<(), String>;

    /// Identifier that must be unique within one file, if the type has one.
    fn record_id(&self) -> Option<&str> {
        None
    }
}

/// Raw image content: either a pixel grid or a precomputed patch-embedding grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ImagePayload {
    /// Row-major `channels × height × width` values in `[0, 1]`.
    Pixels {
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    },
    /// Row-major `h × w` grid of `dim`-dimensional vectors.
    PatchGrid {
        h: usize,
        w: usize,
        dim: usize,
        data: Vec<f64>,
    },
}

impl ImagePayload {
    pub fn pixels(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        ImagePayload::Pixels {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn patch_grid(h: usize, w: usize, dim: usize, data: Vec<f64>) -> Self {
        ImagePayload::PatchGrid { h, w, dim, data }
    }

    pub fn data(&self) -> &[f64] {
        match self {
            ImagePayload::Pixels { data, .. } | ImagePayload::PatchGrid { data, .. } => data,
        }
    }
}

impl Validate for ImagePayload {
    fn validate(&self) -> Result<(), String> {
        let (expected, what) = match self {
            ImagePayload::Pixels {
                channels,
                height,
                width,
                ..
            } => (channels * height * width, "pixels"),
            ImagePayload::PatchGrid { h, w, dim, .. } => (h * w * dim, "patch_grid"),
        };
        let data = self.data();
        if expected == 0 {
            return Err(format!("{what} payload has a zero dimension"));
        }
        if data.len() != expected {
            return Err(format!(
                "{what} payload shape declares {expected} values but holds {}",
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(format!("{what} payload contains non-finite values"));
        }
        if matches!(self, ImagePayload::Pixels { .. })
            && data.iter().any(|v| !(0.0..=1.0).contains(v))
        {
            return Err("pixel values must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// One image paired with one caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionSample {
    pub id: String,
    pub image: ImagePayload,
    pub text: String,
}

impl Validate for CaptionSample {
    fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.text.trim().is_empty() {
            return Err("empty text".into());
        }
        self.image.validate()
    }

    fn record_id(&self) -> Option<&str> {
        Some(&self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Item {
    Text { text: String },
    Image { image: ImagePayload },
}

impl Item {
    pub fn text(s: impl Into<String>) -> Self {
        Item::Text { text: s.into() }
    }

    pub fn image(image: ImagePayload) -> Self {
        Item::Image { image }
    }

    pub fn is_image(&self) -> bool {
        matches!(self, Item::Image { .. })
    }
}

/// An ordered sequence of text paragraphs and images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterleavedDoc {
    pub id: String,
    pub items: Vec<Item>,
}

impl InterleavedDoc {
    pub fn images(&self) -> impl Iterator<Item = &ImagePayload> {
        self.items.iter().filter_map(|it| match it {
            Item::Image { image } => Some(image),
            Item::Text { .. } => None,
        })
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.items.iter().filter_map(|it| match it {
            Item::Text { text } => Some(text.as_str()),
            Item::Image { .. } => None,
        })
    }

    pub fn image_count(&self) -> usize {
        self.images().count()
    }
}

impl Validate for InterleavedDoc {
    fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.items.is_empty() {
            return Err("document has no items".into());
        }
        let mut images = 0;
        let mut texts = 0;
        for item in &self.items {
            match item {
                Item::Image { image } => {
                    image.validate()?;
                    images += 1;
                }
                Item::Text { text } => {
                    if text.trim().is_empty() {
                        return Err("empty text item".into());
                    }
                    texts += 1;
                }
            }
        }
        if images == 0 {
            return Err("document has no image items".into());
        }
        if texts == 0 {
            return Err("document has no text items".into());
        }
        Ok(())
    }

    fn record_id(&self) -> Option<&str> {
        Some(&self.id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Caption,
    Interleaved,
}

/// Either record kind. Deserialization is by shape: captions carry `image`
/// and `text`, documents carry `items`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Record {
    Caption(CaptionSample),
    Interleaved(InterleavedDoc),
}

impl Record {
    pub fn id(&self) -> &str {
        match self {
            Record::Caption(c) => &c.id,
            Record::Interleaved(d) => &d.id,
        }
    }

    pub fn modality(&self) -> Modality {
        match self {
            Record::Caption(_) => Modality::Caption,
            Record::Interleaved(_) => Modality::Interleaved,
        }
    }
}

impl From<CaptionSample> for Record {
    fn from(c: CaptionSample) -> Self {
        Record::Caption(c)
    }
}

impl From<InterleavedDoc> for Record {
    fn from(d: InterleavedDoc) -> Self {
        Record::Interleaved(d)
    }
}

impl Validate for Record {
    fn validate(&self) -> Result<(), String> {
        match self {
            Record::Caption(c) => c.validate(),
            Record::Interleaved(d) => d.validate(),
        }
    }

    fn record_id(&self) -> Option<&str> {
        Some(self.id())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    NonsyntheticPositive,
}

/// A record with its training target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLabeled", into = "RawLabeled")]
pub struct LabeledSample {
    pub record: Record,
    pub label: QualityLabel,
    pub provenance: Provenance,
}

impl LabeledSample {
    pub fn new(record: impl Into<Record>, label: QualityLabel, provenance: Provenance) -> Self {
        LabeledSample {
            record: record.into(),
            label,
            provenance,
        }
    }

    pub fn id(&self) -> &str {
        self.record.id()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLabeled {
    record: Record,
    label: i64,
    level_name: String,
    provenance: Provenance,
}

impl TryFrom<RawLabeled> for LabeledSample {
    type Error = String;

    fn try_from(raw: RawLabeled) -> Result<Self, Self::Error> {
        let label = u8::try_from(raw.label)
            .ok()
            .and_then(QualityLabel::from_value)
            .ok_or_else(|| format!("label out of range: {}", raw.label))?;
        if raw.level_name != label.name() {
            return Err(format!(
                "level_name '{}' inconsistent with label {}",
                raw.level_name,
                label.value()
            ));
        }
        Ok(LabeledSample {
            record: raw.record,
            label,
            provenance: raw.provenance,
        })
    }
}

impl From<LabeledSample> for RawLabeled {
    fn from(s: LabeledSample) -> Self {
        RawLabeled {
            record: s.record,
            label: s.label.value() as i64,
            level_name: s.label.name().to_string(),
            provenance: s.provenance,
        }
    }
}

impl Validate for LabeledSample {
    fn validate(&self) -> Result<(), String> {
        self.record.validate()
    }

    fn record_id(&self) -> Option<&str> {
        Some(self.id())
    }
}

/// A record id with its raw regressor output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoredRecord {
    pub id: String,
    pub score: f64,
    pub modality: Modality,
}

impl Validate for ScoredRecord {
    fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if !self.score.is_finite() {
            return Err("score is not finite".into());
        }
        Ok(())
    }

    fn record_id(&self) -> Option<&str> {
        Some(&self.id)
    }
}

/// Sidecar entry for a record a stage refused or dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectRecord {
    pub id: String,
    pub reason: String,
}

impl Validate for RejectRecord {
    fn validate(&self) -> Result<(), String> {
        Ok(())
    }
}
