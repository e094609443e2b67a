use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::generator::{parse_caption_response, parse_interleaved_response, Generator, GeneratorRequest};
use super::prompts::{build_prompt, PromptConfig};
use super::QualityLabel;
use crate::error::{Error, Result};
use crate::io::{CaptionSample, ImagePayload, Item, LabeledSample, Modality, Provenance, Record, Validate};
use crate::rng;

/// Samples per quality level, for each modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCounts {
    pub caption: usize,
    pub interleaved: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub per_level: LevelCounts,
    pub val_fraction: f64,
    pub seed: u64,
    pub num_words: usize,
    pub min_doc_words: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            per_level: LevelCounts {
                caption: 100,
                interleaved: 100,
            },
            val_fraction: 0.05,
            seed: 0,
            num_words: 20,
            min_doc_words: 500,
        }
    }
}

/// Passes every text; the default safety predicate.
pub fn always_pass(_: &str) -> bool {
    true
}

pub fn scan_safety(text: &str, predicate: &dyn Fn(&str) -> bool) -> bool {
    predicate(text)
}

/// Rejects texts containing any of `words` as a whole token (case-insensitive).
pub fn banned_words_predicate(words: Vec<String>) -> impl Fn(&str) -> bool {
    let banned: HashSet<String> = words.into_iter().map(|w| w.to_lowercase()).collect();
    move |text: &str| {
        !crate::packing::split_words(text)
            .iter()
            .any(|w| banned.contains(&w.to_lowercase()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub seed: u64,
    /// Generated (pre-safety) samples per modality and level.
    pub generated: BTreeMap<String, BTreeMap<String, usize>>,
    /// Samples excluded by the safety scan, per modality.
    pub safety_excluded: BTreeMap<String, usize>,
    pub nonsynthetic_positives: usize,
    pub total: usize,
    pub train: usize,
    pub val: usize,
    pub val_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<LabeledSample>,
    pub val: Vec<LabeledSample>,
    pub report: GenerationReport,
}

impl Dataset {
    /// Train then validation, i.e. the full labeled set.
    pub fn all(&self) -> impl Iterator<Item = &LabeledSample> {
        self.train.iter().chain(&self.val)
    }
}

/// Validation size: `⌊f·N⌋`.
pub fn val_count(n: usize, val_fraction: f64) -> usize {
    (val_fraction * n as f64 + 1e-9).floor() as usize
}

fn modality_key(m: Modality) -> String {
    match m {
        Modality::Caption => "caption".into(),
        Modality::Interleaved => "interleaved".into(),
    }
}

fn record_text(record: &Record) -> String {
    match record {
        Record::Caption(c) => c.text.clone(),
        Record::Interleaved(d) => d
            .items
            .iter()
            .filter_map(|i| match i {
                Item::Text { text } => Some(text.as_str()),
                Item::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n"),
    }
}

/// Generates `per_level` samples of each level for both modalities, adds the
/// non-synthetic positives, shuffles and splits. Sample `j` of level `l`
/// uses source image (group) `4j + l`.
pub fn build_dataset(
    generator: &dyn Generator,
    caption_images: &[ImagePayload],
    doc_images: &[Vec<ImagePayload>],
    nonsynthetic: &[CaptionSample],
    cfg: &DatasetConfig,
    safety: &dyn Fn(&str) -> bool,
) -> Result<Dataset> {
    if !(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0) {
        return Err(Error::Config("val_fraction must lie in (0, 1)".into()));
    }
    let need_c = 4 * cfg.per_level.caption;
    let need_d = 4 * cfg.per_level.interleaved;
    if caption_images.len() < need_c {
        return Err(Error::invalid(format!(
            "insufficient source images: need {need_c} caption images, have {}",
            caption_images.len()
        )));
    }
    if doc_images.len() < need_d {
        return Err(Error::invalid(format!(
            "insufficient source images: need {need_d} document image groups, have {}",
            doc_images.len()
        )));
    }

    let mut generated: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut excluded: BTreeMap<String, usize> = BTreeMap::new();
    let mut samples = Vec::new();
    let jobs = [
        (Modality::Caption, cfg.per_level.caption, "cap"),
        (Modality::Interleaved, cfg.per_level.interleaved, "doc"),
    ];
    for (modality, per_level, prefix) in jobs {
        let key = modality_key(modality);
        excluded.insert(key.clone(), 0);
        for j in 0..per_level {
            for level in QualityLabel::ALL {
                let idx = 4 * j + level.value() as usize;
                let images: &[ImagePayload] = match modality {
                    Modality::Caption => std::slice::from_ref(&caption_images[idx]),
                    Modality::Interleaved => &doc_images[idx],
                };
                let id = format!("{prefix}-{}-{j:06}", level.value());
                let prompt = build_prompt(&PromptConfig {
                    modality,
                    level,
                    num_words: cfg.num_words,
                    min_doc_words: cfg.min_doc_words,
                });
                let request = GeneratorRequest {
                    modality,
                    level,
                    prompt,
                    image_refs: (0..images.len()).map(|k| crate::packing::image_ref(&id, k)).collect(),
                    seed: rng::derive(cfg.seed, &format!("generate-{prefix}"), idx as u64),
                };
                let raw = generator.generate(&request, images)?;
                let record: Record = match modality {
                    Modality::Caption => CaptionSample {
                        id: id.clone(),
                        image: images[0].clone(),
                        text: parse_caption_response(&raw)?.caption_for(level)?.to_string(),
                    }
                    .into(),
                    Modality::Interleaved => parse_interleaved_response(&id, &raw, images)?.into(),
                };
                record
                    .validate()
                    .map_err(|m| Error::invalid(format!("{id}: generated record invalid: {m}")))?;
                *generated.entry(key.clone()).or_default().entry(level.name().into()).or_default() += 1;
                if !scan_safety(&record_text(&record), safety) {
                    *excluded.get_mut(&key).expect("inserted above") += 1;
                    continue;
                }
                samples.push(LabeledSample::new(record, level, Provenance::Synthetic));
            }
        }
    }
    for c in nonsynthetic {
        samples.push(LabeledSample::new(c.clone(), QualityLabel::Positive, Provenance::NonsyntheticPositive));
    }
    let mut seen = HashSet::new();
    for s in &samples {
        if !seen.insert(s.id().to_string()) {
            return Err(Error::invalid(format!("duplicate id {:?} in dataset", s.id())));
        }
    }
    samples.shuffle(&mut rng::stream(cfg.seed, "dataset-split", 0));
    let n_val = val_count(samples.len(), cfg.val_fraction);
    let train = samples.split_off(n_val);
    let val = samples;
    let report = GenerationReport {
        seed: cfg.seed,
        generated,
        safety_excluded: excluded,
        nonsynthetic_positives: nonsynthetic.len(),
        total: train.len() + val.len(),
        train: train.len(),
        val: val.len(),
        val_fraction: cfg.val_fraction,
    };
    Ok(Dataset { train, val, report })
}
