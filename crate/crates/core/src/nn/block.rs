use std::ops::Range;

use rand::Rng;

use super::attention::{Attention, AttentionCache};
use super::ops::{LayerNorm, LayerNormCache, Linear, Mlp, MlpCache};
use super::params::{prefixed, ParamSet};
use super::tensor::Tensor2D;
use crate::error::Result;
use crate::scalar::Scalar;

/// Pre-norm transformer block:
/// `x ← x + Attn(LN₁(x))`, then `x ← x + MLP(LN₂(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<S> {
    pub ln1: LayerNorm<S>,
    pub attn: Attention<S>,
    pub ln2: LayerNorm<S>,
    pub mlp: Mlp<S>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<S> {
    ln1: LayerNormCache<S>,
    attn: AttentionCache<S>,
    ln2: LayerNormCache<S>,
    mlp: MlpCache<S>,
}

impl<S: Scalar> Block<S> {
    /// `hidden` is the MLP width; residual output projections use `out_std`.
    pub fn new(d: usize, hidden: usize, std: f64, out_std: f64, rng: &mut impl Rng) -> Self {
        Block {
            ln1: LayerNorm::new(d),
            attn: Attention::new(d, std, out_std, rng),
            ln2: LayerNorm::new(d),
            mlp: Mlp {
                fc: Linear::new(d, hidden, std, rng),
                proj: Linear::new(hidden, d, out_std, rng),
            },
        }
    }

    pub fn forward(
        &self,
        x: &Tensor2D<S>,
        spans: &[Range<usize>],
        n_heads: usize,
    ) -> Result<(Tensor2D<S>, BlockCache<S>)> {
        let (a, ln1) = self.ln1.forward(x);
        let (att, attn) = self.attn.forward(&a, spans, n_heads)?;
        let mut x1 = x.clone();
        x1.add_assign(&att);
        let (c, ln2) = self.ln2.forward(&x1);
        let (m, mlp) = self.mlp.forward(&c)?;
        let mut x2 = x1;
        x2.add_assign(&m);
        Ok((x2, BlockCache { ln1, attn, ln2, mlp }))
    }

    pub fn backward(
        &self,
        dy: &Tensor2D<S>,
        cache: &BlockCache<S>,
        spans: &[Range<usize>],
        n_heads: usize,
        grads: &mut Block<S>,
    ) -> Tensor2D<S> {
        // residual: dx1 = dy + d(MLP branch)
        let dc = self.mlp.backward(dy, &cache.mlp, &mut grads.mlp);
        let mut dx1 = self.ln2.backward(&dc, &cache.ln2, &mut grads.ln2);
        dx1.add_assign(dy);
        let da = self.attn.backward(&dx1, &cache.attn, spans, n_heads, &mut grads.attn);
        let mut dx = self.ln1.backward(&da, &cache.ln1, &mut grads.ln1);
        dx.add_assign(&dx1);
        dx
    }
}

impl<S: Scalar> ParamSet<S> for Block<S> {
    fn named(&self) -> Vec<(String, &Tensor2D<S>)> {
        let mut v = prefixed("ln1", self.ln1.named());
        v.extend(prefixed("attn", self.attn.named()));
        v.extend(prefixed("ln2", self.ln2.named()));
        v.extend(prefixed("mlp", self.mlp.named()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2D<S>> {
        let mut v = self.ln1.tensors_mut();
        v.extend(self.attn.tensors_mut());
        v.extend(self.ln2.tensors_mut());
        v.extend(self.mlp.tensors_mut());
        v
    }
}

/// Single-sequence convenience wrapper.
pub fn transformer_block<S: Scalar>(x: &Tensor2D<S>, block: &Block<S>, n_heads: usize) -> Result<Tensor2D<S>> {
    block.forward(x, &[0..x.rows()], n_heads).map(|(y, _)| y)
}
