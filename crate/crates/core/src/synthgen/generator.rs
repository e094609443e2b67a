use serde::{Deserialize, Serialize};

use super::QualityLabel;
use crate::error::{Error, Result};
use crate::io::{ImagePayload, InterleavedDoc, Item, Modality};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRequest {
    pub modality: Modality,
    pub level: QualityLabel,
    pub prompt: String,
    /// Stable references to the images sent along with the prompt.
    pub image_refs: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionResponse {
    pub topic: String,
    pub positive_caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_caption: Option<String>,
}

impl CaptionResponse {
    /// The caption that carries `level`.
    pub fn caption_for(&self, level: QualityLabel) -> Result<&str> {
        if level == QualityLabel::Positive {
            return Ok(&self.positive_caption);
        }
        self.negative_caption
            .as_deref()
            .ok_or_else(|| Error::invalid("generator response lacks negative_caption"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterleavedResponse {
    pub image_tags: Vec<String>,
    pub document: String,
}

/// Text generator behind the synthetic-data pipeline. Implementations
/// return the raw JSON object the model produced.
pub trait Generator {
    fn generate(&self, request: &GeneratorRequest, images: &[ImagePayload]) -> Result<String>;
}

/// Connection settings for a hosted multimodal model. This build ships no
/// transport; plug a client in by implementing [`Generator`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteGeneratorConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
}

#[derive(Debug, Clone)]
pub struct RemoteGenerator {
    pub config: RemoteGeneratorConfig,
}

impl Generator for RemoteGenerator {
    fn generate(&self, _request: &GeneratorRequest, _images: &[ImagePayload]) -> Result<String> {
        Err(Error::Config(format!(
            "no transport available for remote generator {} at {}",
            self.config.model, self.config.endpoint
        )))
    }
}

pub fn parse_caption_response(resp: &str) -> Result<CaptionResponse> {
    serde_json::from_str(resp).map_err(|e| Error::invalid(format!("unparsable generator response: {e}")))
}

const OPEN: &str = "<img>";
const CLOSE: &str = "</img>";

/// Splits a generated document at its `<img>…</img>` placeholders; the i-th
/// tag occurrence becomes the i-th image.
pub fn parse_interleaved_response(id: &str, resp: &str, images: &[ImagePayload]) -> Result<InterleavedDoc> {
    let parsed: InterleavedResponse =
        serde_json::from_str(resp).map_err(|e| Error::invalid(format!("unparsable generator response: {e}")))?;
    let mut items = Vec::new();
    let mut tags: Vec<&str> = Vec::new();
    let mut rest = parsed.document.as_str();
    loop {
        let Some(start) = rest.find(OPEN) else {
            push_text(&mut items, rest);
            break;
        };
        push_text(&mut items, &rest[..start]);
        let after = &rest[start + OPEN.len()..];
        let end = after
            .find(CLOSE)
            .ok_or_else(|| Error::invalid("unclosed <img> tag in generated document"))?;
        let tag = after[..end].trim();
        if tags.contains(&tag) {
            return Err(Error::invalid(format!("duplicate tag use: {tag:?}")));
        }
        tags.push(tag);
        items.push(None);
        rest = &after[end + CLOSE.len()..];
    }
    if tags.len() != images.len() {
        return Err(Error::invalid(format!(
            "tag/image count mismatch: {} tags, {} images",
            tags.len(),
            images.len()
        )));
    }
    let mut next = images.iter();
    let items = items
        .into_iter()
        .map(|it| it.unwrap_or_else(|| Item::image(next.next().expect("counts checked").clone())))
        .collect();
    Ok(InterleavedDoc { id: id.to_string(), items })
}

fn push_text(items: &mut Vec<Option<Item>>, s: &str) {
    let t = s.trim();
    if !t.is_empty() {
        items.push(Some(Item::text(t)));
    }
}
