use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::Classifier;
use crate::error::{Error, Result};
use crate::nn::{ParamSet, Tensor2D};
use crate::packing::Vocab;
use crate::scalar::{Precision, Scalar};

pub const CHECKPOINT_FORMAT: &str = "unifilter-checkpoint-v1";

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    precision: Precision,
    config: ModelConfig,
    vocab: Vec<String>,
    tensors: Vec<NamedTensor>,
}

fn precision_of<S: Scalar>() -> Precision {
    if S::NAME == "f32" {
        Precision::F32
    } else {
        Precision::F64
    }
}

impl<S: Scalar> Classifier<S> {
    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            precision: precision_of::<S>(),
            config: self.config.clone(),
            vocab: self.vocab.tokens().to_vec(),
            tensors: self
                .params
                .named()
                .into_iter()
                .map(|(name, t)| NamedTensor {
                    name,
                    rows: t.rows(),
                    cols: t.cols(),
                    data: t.to_f64_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    /// Rebuilds a classifier; the stored precision may differ from `S`.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format {:?}", file.format)));
        }
        let vocab = Vocab::from_tokens(file.vocab)?;
        let mut model = Classifier::new(file.config, vocab, 0)?;
        let names: Vec<String> = model.params.named().into_iter().map(|(n, _)| n).collect();
        if names.len() != file.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                names.len(),
                file.tensors.len()
            )));
        }
        for ((name, dst), src) in names.iter().zip(model.params.tensors_mut()).zip(&file.tensors) {
            if *name != src.name || dst.shape() != (src.rows, src.cols) {
                return Err(Error::Checkpoint(format!(
                    "tensor {} ({}x{}) does not match expected {name} {:?}",
                    src.name,
                    src.rows,
                    src.cols,
                    dst.shape()
                )));
            }
            let t = Tensor2D::from_f64(src.rows, src.cols, &src.data)?;
            if !t.is_finite() {
                return Err(Error::Checkpoint(format!("tensor {name} has non-finite entries")));
            }
            *dst = t;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Reads only the precision header of a checkpoint.
pub fn checkpoint_precision(path: impl AsRef<Path>) -> Result<Precision> {
    #[derive(Deserialize)]
    struct Header {
        format: String,
        precision: Precision,
    }
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let h: Header =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
    if h.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format {:?}", h.format)));
    }
    Ok(h.precision)
}
