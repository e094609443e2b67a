//! Synthetic multi-level training data: prompts, generator contract, the
//! deterministic mock generator, and dataset assembly.

mod dataset;
mod generator;
mod label;
mod mock;
mod prompts;

pub use dataset::{
    always_pass, banned_words_predicate, build_dataset, scan_safety, val_count, Dataset, DatasetConfig,
    GenerationReport, LevelCounts,
};
pub use generator::{
    parse_caption_response, parse_interleaved_response, CaptionResponse, Generator, GeneratorRequest,
    InterleavedResponse, RemoteGenerator, RemoteGeneratorConfig,
};
pub use label::QualityLabel;
pub use mock::{
    image_keywords, keyword_words, mock_generate, mock_image, oracle_label, text_keywords, Keywords, MockGenerator,
    MockImageSource, K, SLOT_NAMES, SLOT_WORDS, WORDS_PER_SLOT,
};
pub use prompts::{build_prompt, quality_requirement, PromptConfig};
