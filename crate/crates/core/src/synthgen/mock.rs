//! Deterministic stand-in for a hosted text generator. Each image encodes
//! one word per keyword slot as the colour of a stripe; generated text keeps
//! or swaps those words according to the requested level, so the label can
//! be read back from keyword overlap alone.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::generator::{CaptionResponse, Generator, GeneratorRequest, InterleavedResponse};
use super::QualityLabel;
use crate::error::{Error, Result};
use crate::io::{ImagePayload, Item, Modality, Record};
use crate::packing::split_words;
use crate::rng::{self, Rng};

/// Keyword slots per image.
pub const K: usize = 4;
/// Words per slot; a word index fits in the red and green bits of a stripe.
pub const WORDS_PER_SLOT: usize = 4;

pub const SLOT_NAMES: [&str; K] = ["color", "object", "action", "place"];

pub const SLOT_WORDS: [[&str; WORDS_PER_SLOT]; K] = [
    ["black", "red", "green", "yellow"],
    ["cat", "dog", "bird", "boat"],
    ["sleeping", "running", "sitting", "flying"],
    ["beach", "forest", "city", "river"],
];

/// Near-neighbour substitute for each keyword. These never appear in an
/// image's keyword set.
pub const NEAR_WORDS: [[&str; WORDS_PER_SLOT]; K] = [
    ["charcoal", "crimson", "olive", "golden"],
    ["kitten", "puppy", "sparrow", "ship"],
    ["napping", "jogging", "resting", "gliding"],
    ["shore", "woods", "town", "lake"],
];

const TEMPLATE: &str = "a {0} {1} is {2} in the {3} .";

const FILLERS: [&str; 8] = [
    "the light is soft and warm .",
    "the scene looks calm and quiet .",
    "there is a lot of small detail .",
    "the picture is sharp and clear .",
    "it feels like a normal day .",
    "the view is wide and open .",
    "everything looks simple and clean .",
    "the shapes are easy to see .",
];

const HIGH: f64 = 0.95;
const LOW: f64 = 0.05;

/// One word index per slot.
pub type Keywords = [usize; K];

fn slot_of(word: &str) -> Option<(usize, usize)> {
    SLOT_WORDS
        .iter()
        .enumerate()
        .find_map(|(s, ws)| ws.iter().position(|w| *w == word).map(|i| (s, i)))
}

pub fn keyword_words(kw: &Keywords) -> [&'static str; K] {
    std::array::from_fn(|s| SLOT_WORDS[s][kw[s]])
}

/// Reads the keyword set back from an image. Pixel rows `y ≡ s (mod K)`
/// carry slot `s`: the red and green means give the word's two bits.
/// Precomputed grids fall back to a hash of their row-group means.
pub fn image_keywords(image: &ImagePayload) -> Keywords {
    match image {
        ImagePayload::Pixels {
            channels,
            height,
            width,
            data,
        } => std::array::from_fn(|s| {
            let mut word = 0;
            for c in 0..(*channels).min(2) {
                let mut sum = 0.0;
                let mut n = 0usize;
                for y in (s..*height).step_by(K) {
                    let row = c * height * width + y * width;
                    sum += data[row..row + width].iter().sum::<f64>();
                    n += width;
                }
                if n > 0 && sum / n as f64 > 0.5 {
                    word |= 1 << c;
                }
            }
            word
        }),
        ImagePayload::PatchGrid { h, w, dim, data } => std::array::from_fn(|s| {
            let mut hash = 0xcbf2_9ce4_8422_2325u64;
            for k in 0..*dim {
                let mut sum = 0.0;
                for y in (s..*h).step_by(K) {
                    for x in 0..*w {
                        sum += data[(y * w + x) * dim + k];
                    }
                }
                let q = (sum * 8.0).round() as i64;
                for b in q.to_le_bytes() {
                    hash = (hash ^ b as u64).wrapping_mul(0x0100_0000_01b3);
                }
            }
            (hash ^ s as u64) as usize % WORDS_PER_SLOT
        }),
    }
}

/// Per-slot set of keyword indices mentioned in `text`.
pub fn text_keywords(text: &str) -> [Vec<usize>; K] {
    let mut out: [Vec<usize>; K] = Default::default();
    for w in split_words(text) {
        if let Some((s, i)) = slot_of(&w.to_ascii_lowercase()) {
            if !out[s].contains(&i) {
                out[s].push(i);
            }
        }
    }
    out
}

/// A `3 × side × side` image of horizontal stripes: row `y` shows slot
/// `y mod K`, coloured by that slot's word (red = bit 0, green = bit 1).
/// Every 4×4 patch therefore sees all K keywords.
pub fn mock_image(kw: &Keywords, side: usize, rng: &mut Rng) -> ImagePayload {
    assert!(side >= K && side % K == 0, "side must be a multiple of {K}");
    let mut data = vec![0.0; 3 * side * side];
    for c in 0..3 {
        for y in 0..side {
            let on = c < 2 && kw[y % K] >> c & 1 == 1;
            let base = if on { HIGH } else { LOW };
            for x in 0..side {
                let v: f64 = base + rng.random_range(-0.05..0.05);
                // two-decimal quantization keeps the JSONL compact
                data[c * side * side + y * side + x] = (v.clamp(0.0, 1.0) * 100.0).round() / 100.0;
            }
        }
    }
    ImagePayload::pixels(3, side, side, data)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockImageSource {
    pub side: usize,
    /// Documents carry between 1 and this many images.
    pub max_doc_images: usize,
}

impl Default for MockImageSource {
    fn default() -> Self {
        MockImageSource {
            side: 16,
            max_doc_images: 2,
        }
    }
}

impl MockImageSource {
    fn image(&self, seed: u64, label: &str, i: u64) -> ImagePayload {
        let mut r = rng::stream(seed, label, i);
        let kw: Keywords = std::array::from_fn(|_| r.random_range(0..WORDS_PER_SLOT));
        mock_image(&kw, self.side, &mut r)
    }

    pub fn caption_images(&self, n: usize, seed: u64) -> Vec<ImagePayload> {
        (0..n as u64).map(|i| self.image(seed, "mock-caption-image", i)).collect()
    }

    pub fn document_images(&self, n: usize, seed: u64) -> Vec<Vec<ImagePayload>> {
        (0..n as u64)
            .map(|i| {
                let count = rng::stream(seed, "mock-doc-image-count", i).random_range(1..=self.max_doc_images.max(1));
                (0..count as u64)
                    .map(|j| self.image(seed, "mock-doc-image", i * 64 + j))
                    .collect()
            })
            .collect()
    }
}

/// Number of keywords each level swaps out of a caption.
fn replaced_per_caption(level: QualityLabel) -> usize {
    match level {
        QualityLabel::Positive => 0,
        QualityLabel::HardNegative => 1,
        QualityLabel::MediumNegative => 3,
        QualityLabel::EasyNegative => K,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockGenerator {
    /// Captions shorter than this are padded with filler sentences.
    pub num_words: usize,
    /// Same for each document paragraph.
    pub paragraph_words: usize,
}

impl Default for MockGenerator {
    fn default() -> Self {
        MockGenerator {
            num_words: 0,
            paragraph_words: 0,
        }
    }
}

fn sentence(words: &[&str; K]) -> String {
    let mut s = TEMPLATE.to_string();
    for (i, w) in words.iter().enumerate() {
        s = s.replace(&format!("{{{i}}}"), w);
    }
    s
}

fn pad_with_fillers(mut text: String, min_words: usize, r: &mut Rng) -> String {
    while crate::packing::word_count(&text) < min_words {
        text.push(' ');
        text.push_str(FILLERS[r.random_range(0..FILLERS.len())]);
    }
    text
}

/// Replaces the chosen slots of `kw` by their near neighbours.
fn near_swap(kw: &Keywords, slots: &[usize]) -> [&'static str; K] {
    let mut words = keyword_words(kw);
    for &s in slots {
        words[s] = NEAR_WORDS[s][kw[s]];
    }
    words
}

/// Keywords of some other image: every slot differs from all of `avoid[slot]`.
fn foreign_words(avoid: &[Vec<usize>; K], r: &mut Rng) -> [&'static str; K] {
    std::array::from_fn(|s| {
        let options: Vec<usize> = (0..WORDS_PER_SLOT).filter(|i| !avoid[s].contains(i)).collect();
        SLOT_WORDS[s][options[r.random_range(0..options.len())]]
    })
}

fn avoid_sets(kws: &[Keywords]) -> [Vec<usize>; K] {
    std::array::from_fn(|s| kws.iter().map(|k| k[s]).collect())
}

impl MockGenerator {
    pub fn caption(&self, image: &ImagePayload, level: QualityLabel, seed: u64) -> CaptionResponse {
        let mut r = rng::stream(seed, "mock-caption", 0);
        let kw = image_keywords(image);
        let positive = pad_with_fillers(sentence(&keyword_words(&kw)), self.num_words, &mut r);
        let negative = (level != QualityLabel::Positive).then(|| {
            let words = match level {
                QualityLabel::EasyNegative => foreign_words(&avoid_sets(&[kw]), &mut r),
                l => near_swap(&kw, &index::sample(&mut r, K, replaced_per_caption(l)).into_vec()),
            };
            pad_with_fillers(sentence(&words), self.num_words, &mut r)
        });
        CaptionResponse {
            topic: SLOT_WORDS[1][kw[1]].to_string(),
            positive_caption: positive,
            negative_caption: negative,
        }
    }

    /// Document of `image, paragraph` pairs. Hard negatives get one keyword
    /// wrong in the whole document; other levels apply the caption rule to
    /// every paragraph.
    pub fn document(&self, images: &[ImagePayload], level: QualityLabel, seed: u64) -> InterleavedResponse {
        let mut r = rng::stream(seed, "mock-document", 0);
        let kws: Vec<Keywords> = images.iter().map(image_keywords).collect();
        let avoid = avoid_sets(&kws);
        let hard_target = r.random_range(0..kws.len().max(1));
        let mut tags = Vec::with_capacity(kws.len());
        let mut doc = Vec::with_capacity(2 * kws.len());
        for (i, kw) in kws.iter().enumerate() {
            let words = match level {
                QualityLabel::EasyNegative => foreign_words(&avoid, &mut r),
                QualityLabel::HardNegative if i == hard_target => near_swap(kw, &[r.random_range(0..K)]),
                QualityLabel::HardNegative => keyword_words(kw),
                l => near_swap(kw, &index::sample(&mut r, K, replaced_per_caption(l)).into_vec()),
            };
            let tag = format!("<img>image {} {} {}</img>", i + 1, SLOT_WORDS[0][kw[0]], SLOT_WORDS[1][kw[1]]);
            doc.push(tag.clone());
            doc.push(pad_with_fillers(sentence(&words), self.paragraph_words, &mut r));
            tags.push(tag);
        }
        InterleavedResponse {
            image_tags: tags,
            document: doc.join(" "),
        }
    }
}

/// Caption text for `level`; convenience over [`MockGenerator::caption`].
pub fn mock_generate(image: &ImagePayload, level: QualityLabel, seed: u64) -> String {
    let resp = MockGenerator::default().caption(image, level, seed);
    resp.caption_for(level).expect("mock always fills the level's caption").to_string()
}

impl Generator for MockGenerator {
    fn generate(&self, request: &GeneratorRequest, images: &[ImagePayload]) -> Result<String> {
        let json = match request.modality {
            Modality::Caption => {
                let [image] = images else {
                    return Err(Error::invalid("caption generation takes exactly one image"));
                };
                serde_json::to_string(&self.caption(image, request.level, request.seed))?
            }
            Modality::Interleaved => {
                if images.is_empty() {
                    return Err(Error::invalid("document generation needs at least one image"));
                }
                serde_json::to_string(&self.document(images, request.level, request.seed))?
            }
        };
        Ok(json)
    }
}

/// Keyword-overlap oracle: pairs each image with the text that follows it
/// (captions: the caption) and counts image keywords missing from the text.
pub fn oracle_label(record: &Record) -> Option<QualityLabel> {
    let pairs: Vec<(Keywords, String)> = match record {
        Record::Caption(c) => vec![(image_keywords(&c.image), c.text.clone())],
        Record::Interleaved(d) => {
            let mut pairs: Vec<(Keywords, String)> = Vec::new();
            for item in &d.items {
                match item {
                    Item::Image { image } => pairs.push((image_keywords(image), String::new())),
                    Item::Text { text } => {
                        if let Some(last) = pairs.last_mut() {
                            last.1.push(' ');
                            last.1.push_str(text);
                        }
                    }
                }
            }
            pairs
        }
    };
    if pairs.is_empty() {
        return None;
    }
    let total = pairs.len() * K;
    let missing: usize = pairs
        .iter()
        .map(|(kw, text)| {
            let found = text_keywords(text);
            (0..K).filter(|&s| !found[s].contains(&kw[s])).count()
        })
        .sum();
    Some(match missing {
        0 => QualityLabel::Positive,
        1 => QualityLabel::HardNegative,
        m if m == total => QualityLabel::EasyNegative,
        _ => QualityLabel::MediumNegative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::CaptionSample;
    use crate::synthgen::parse_interleaved_response;

    #[test]
    fn slot_words_are_unique() {
        let mut all: Vec<&str> = SLOT_WORDS.iter().chain(&NEAR_WORDS).flatten().copied().collect();
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n);
        for f in FILLERS.iter().chain(&[TEMPLATE]) {
            for w in split_words(f) {
                assert!(slot_of(w).is_none(), "{w} in filler");
            }
        }
    }

    #[test]
    fn keywords_round_trip_through_pixels() {
        let mut r = rng::stream(0, "t", 0);
        for i in 0..200 {
            let kw: Keywords = std::array::from_fn(|s| (i * 7 + s * 3) % WORDS_PER_SLOT);
            assert_eq!(image_keywords(&mock_image(&kw, 16, &mut r)), kw);
        }
    }

    #[test]
    fn caption_overlap_by_level() {
        let src = MockImageSource::default();
        for (i, img) in src.caption_images(50, 1).iter().enumerate() {
            let kw = image_keywords(img);
            for level in QualityLabel::ALL {
                let text = mock_generate(img, level, i as u64);
                let found = text_keywords(&text);
                let shared = (0..K).filter(|&s| found[s].contains(&kw[s])).count();
                assert_eq!(shared, K - replaced_per_caption(level), "{level}: {text}");
            }
        }
    }

    #[test]
    fn oracle_recovers_levels() {
        let src = MockImageSource::default();
        let g = MockGenerator::default();
        for (i, imgs) in src.document_images(40, 2).iter().enumerate() {
            for level in QualityLabel::ALL {
                let resp = g.document(imgs, level, i as u64);
                let json = serde_json::to_string(&resp).unwrap();
                let doc = parse_interleaved_response("d", &json, imgs).unwrap();
                assert_eq!(doc.image_count(), imgs.len());
                assert_eq!(oracle_label(&doc.into()), Some(level));
            }
        }
        for (i, img) in src.caption_images(40, 3).iter().enumerate() {
            for level in QualityLabel::ALL {
                let c = CaptionSample {
                    id: "c".into(),
                    image: img.clone(),
                    text: mock_generate(img, level, i as u64),
                };
                assert_eq!(oracle_label(&c.into()), Some(level));
            }
        }
    }

    #[test]
    fn every_patch_sees_every_slot() {
        let kw = [1, 2, 3, 0];
        let img = mock_image(&kw, 16, &mut rng::stream(0, "t", 0));
        let data = img.data();
        // stripes repeat every K rows, so each 4-row band decodes alone
        for band in 0..4 {
            let (c, h, w) = (3, 16, 16);
            let crop: Vec<f64> = (0..c)
                .flat_map(|ch| (band * 4..band * 4 + 4).flat_map(move |y| (0..w).map(move |x| ch * h * w + y * w + x)))
                .map(|i| data[i])
                .collect();
            assert_eq!(image_keywords(&ImagePayload::pixels(3, 4, 16, crop)), kw);
        }
    }

    #[test]
    fn filler_pads_to_min_words() {
        let g = MockGenerator {
            num_words: 20,
            paragraph_words: 20,
        };
        let img = &MockImageSource::default().caption_images(1, 0)[0];
        for level in QualityLabel::ALL {
            let c = g.caption(img, level, 1);
            let text = c.caption_for(level).unwrap();
            assert!(crate::packing::word_count(text) >= 20);
            let cap = CaptionSample {
                id: "c".into(),
                image: img.clone(),
                text: text.to_string(),
            };
            assert_eq!(oracle_label(&cap.into()), Some(level));
        }
    }

    #[test]
    fn deterministic() {
        let img = &MockImageSource::default().caption_images(1, 0)[0];
        assert_eq!(
            mock_generate(img, QualityLabel::HardNegative, 5),
            mock_generate(img, QualityLabel::HardNegative, 5)
        );
        assert_eq!(MockImageSource::default().document_images(3, 9), MockImageSource::default().document_images(3, 9));
    }
}
