use serde::{Deserialize, Serialize};

use super::QualityLabel;
use crate::error::{Error, Result};
use crate::io::Modality;

const CAPTION_REQUIREMENTS: [&str; 4] = [
    "a negative image caption which is completely unrelated to this image.",
    "a negative image caption which has remarkable errors in describing the image.",
    "a hard negative image caption which has subtle difference with the positive caption. \
     The negative caption contains only one property error in describing the image.",
    "a high-quality, comprehensive, detail-enriched caption for this image.",
];

const DOCUMENT_REQUIREMENTS: [&str; 4] = [
    "This document should involve many errors in writing and the document itself is not fluent in reading. \
     The images and the text in the document should be completely not related. \
     The images are inserted in inappropriate and arbitrary places in the document. \
     This document should be knowledge limited and has no educational value to be used as textbooks \
     in primary school or grade school teaching.",
    "This document is readable but still contains several writing errors. \
     The images and document text are under the same topic and the text contents are still not aligned well to the images. \
     The document is knowledge sparse and has very limited educational value to be used as textbooks \
     in primary school or grade school teaching.",
    "This document should involve several errors in writing. \
     The images and the text in the document are partially related. \
     However, the images cannot help the understanding of the text and cannot provide any additional information. \
     The images are inserted in reasonable places in the document. \
     This document should contain several factual or commonsense knowledge errors \
     which makes it inappropriate for educational purposes.",
    "This document is a high-quality, comprehensive, detail-enriched document. \
     The images are inserted in the appropriate places in the document to provide additional information \
     to the statement or provide the background information.",
];

const CAPTION_TEMPLATE: &str = r#"You are a helpful assistant to help users write two opposite image captions for the given image in JSON format. The JSON object must contain the following keys:
- "topic": a string, a topic word of this image
- "positive_caption": a string, a high-quality, comprehensive, detail-enriched caption for this image.
- "negative_caption": a string, {multi-level quality requirements}

Please adhere to the following guidelines:
- Both captions should be at least {num_words} words long.
- Both captions should be in English.
- Please avoid using complex or advanced words in the captions. Ensure that the language is suitable for a high school level audience or lower.

Your output must always be a JSON object only, do not explain yourself or output anything else. Be creative!"#;

const DOCUMENT_TEMPLATE: &str = r#"You are an assistant to help users to write a document given several images. These images are extracted from a paper, report, or article in which these images are inserted.

<guideline>
Please firstly generate a xml tag for each image in order for future generation. For each image, please generate a xml tag like "<img>image description</img>". You need to replace the image description with your generated short description of this image which is less than 5 words.

For the second task, {multi-level quality requirements}

Please adhere to the following guidelines when writing this document:
- The paragraphs in the document should be in varied length.
- The document should contain at least {min_doc_words} words.
- You NEED to use xml tag as the placeholder to indicate the place where an image is inserted into.
- You NEED to ensure that all given images are used and considered.
- You MUST NOT use the image xml tag within your sentences. You should add them between sentences and paragraphs.
- You MUST use each image for ONLY ONCE in the document.

Your output must always be a JSON object only. The JSON object must contain the keys of "image_tags" and "document".

</guideline>

Now, it is your turn. Please strictly follow the above guidelines in <guideline> xml tags when writing the document."#;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub modality: Modality,
    pub level: QualityLabel,
    /// Minimum caption length in words.
    pub num_words: usize,
    /// Minimum document length in words.
    pub min_doc_words: usize,
}

impl PromptConfig {
    pub fn new(modality: Modality, level: QualityLabel) -> Self {
        PromptConfig {
            modality,
            level,
            num_words: 20,
            min_doc_words: 500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_words == 0 || self.min_doc_words == 0 {
            return Err(Error::Config("prompt word minimums must be at least 1".into()));
        }
        Ok(())
    }
}

/// Quality-requirement sentence for a level.
pub fn quality_requirement(modality: Modality, level: QualityLabel) -> &'static str {
    let i = level.value() as usize;
    match modality {
        Modality::Caption => CAPTION_REQUIREMENTS[i],
        Modality::Interleaved => DOCUMENT_REQUIREMENTS[i],
    }
}

pub fn build_prompt(cfg: &PromptConfig) -> String {
    let req = quality_requirement(cfg.modality, cfg.level);
    match cfg.modality {
        Modality::Caption => CAPTION_TEMPLATE
            .replace("{multi-level quality requirements}", req)
            .replace("{num_words}", &cfg.num_words.to_string()),
        Modality::Interleaved => DOCUMENT_TEMPLATE
            .replace("{multi-level quality requirements}", req)
            .replace("{min_doc_words}", &cfg.min_doc_words.to_string()),
    }
}
