use rand::Rng;

use super::config::ModelConfig;
use crate::encoder::{new_projector, Projector};
use crate::nn::params::prefixed;
use crate::nn::{Block, LayerNorm, Linear, ParamSet, Tensor2D};
use crate::scalar::Scalar;

/// Every trainable tensor of the classifier. The frozen patch embedding is
/// not part of this set.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    pub token_embedding: Tensor2D<S>,
    pub position_embedding: Tensor2D<S>,
    pub projector: Projector<S>,
    pub blocks: Vec<Block<S>>,
    pub final_norm: LayerNorm<S>,
    /// `d × 1` regression head.
    pub head: Linear<S>,
}

const INIT_STD: f64 = 0.02;

impl<S: Scalar> ModelParams<S> {
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.d;
        let init_std = INIT_STD;
        let out_std = init_std / (2.0 * cfg.n_layers as f64).sqrt();
        let proj_std = 1.0 / (cfg.encoder.d_v as f64).sqrt();
        ModelParams {
            token_embedding: Tensor2D::randn(cfg.vocab_size, d, init_std, rng),
            position_embedding: Tensor2D::randn(cfg.max_seq_len, d, init_std, rng),
            projector: new_projector(cfg.encoder.d_v, d, proj_std, rng),
            blocks: (0..cfg.n_layers)
                .map(|_| Block::new(d, cfg.mlp_ratio * d, init_std, out_std, rng))
                .collect(),
            final_norm: LayerNorm::new(d),
            head: Linear::new(d, 1, init_std, rng),
        }
    }

    /// Parameter groups, used for reporting per-group gradient checks.
    pub fn group_of(name: &str) -> &str {
        name.split('.').next().unwrap_or(name)
    }
}

impl<S: Scalar> ParamSet<S> for ModelParams<S> {
    fn named(&self) -> Vec<(String, &Tensor2D<S>)> {
        let mut v = vec![
            ("token_embedding".to_string(), &self.token_embedding),
            ("position_embedding".to_string(), &self.position_embedding),
        ];
        v.extend(prefixed("projector", self.projector.named()));
        for (i, b) in self.blocks.iter().enumerate() {
            v.extend(prefixed(&format!("blocks{i}"), b.named()));
        }
        v.extend(prefixed("final_norm", self.final_norm.named()));
        v.extend(prefixed("head", self.head.named()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2D<S>> {
        let mut v = vec![&mut self.token_embedding, &mut self.position_embedding];
        v.extend(self.projector.tensors_mut());
        for b in &mut self.blocks {
            v.extend(b.tensors_mut());
        }
        v.extend(self.final_norm.tensors_mut());
        v.extend(self.head.tensors_mut());
        v
    }
}
