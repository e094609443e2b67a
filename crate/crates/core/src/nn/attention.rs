//! Multi-head causal self-attention over ragged batches.
//!
//! A batch is a stack of sequences in one `N×d` tensor; `spans` gives the row
//! range of each sequence. Attention never crosses a span, and inside a span
//! position `i` sees positions `0..=i` only. This is equivalent to right
//! padding with a key mask, without materializing the pad rows.

use std::ops::Range;

use rand::Rng;

use super::ops::{softmax_in_place, Linear};
use super::params::{prefixed, ParamSet};
use super::tensor::{dot, Tensor2D};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Attention<S> {
    /// Fused query/key/value projection, `d × 3d`.
    pub qkv: Linear<S>,
    pub out: Linear<S>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<S> {
    x: Tensor2D<S>,
    qkv: Tensor2D<S>,
    ctx: Tensor2D<S>,
    /// Per (span, head): a `len×len` row-major block; row `i` is valid up to `i`.
    probs: Vec<Vec<S>>,
    lens: Vec<usize>,
}

impl<S: Scalar> AttentionCache<S> {
    /// Softmax weights of `head` within span number `span`, row `i` over keys `0..=i`.
    pub fn weights(&self, span: usize, head: usize, n_heads: usize, i: usize) -> &[S] {
        let block = &self.probs[span * n_heads + head];
        let len = self.lens[span];
        &block[i * len..i * len + i + 1]
    }
}

pub(crate) fn check_spans(spans: &[Range<usize>], rows: usize) -> Result<()> {
    let mut prev = 0;
    for s in spans {
        if s.start != prev || s.end <= s.start || s.end > rows {
            return Err(Error::shape(format!("bad sequence span {s:?} for {rows} rows")));
        }
        prev = s.end;
    }
    if prev != rows {
        return Err(Error::shape("spans do not cover the batch"));
    }
    Ok(())
}

impl<S: Scalar> Attention<S> {
    pub fn new(d: usize, std: f64, out_std: f64, rng: &mut impl Rng) -> Self {
        Attention {
            qkv: Linear::new(d, 3 * d, std, rng),
            out: Linear::new(d, d, out_std, rng),
        }
    }

    pub fn d(&self) -> usize {
        self.out.fan_out()
    }

    pub fn forward(
        &self,
        x: &Tensor2D<S>,
        spans: &[Range<usize>],
        n_heads: usize,
    ) -> Result<(Tensor2D<S>, AttentionCache<S>)> {
        let d = self.d();
        if n_heads == 0 || d % n_heads != 0 {
            return Err(Error::shape(format!("embedding size {d} not divisible by {n_heads} heads")));
        }
        if x.cols() != d {
            return Err(Error::shape(format!("attention input has {} columns, expected {d}", x.cols())));
        }
        check_spans(spans, x.rows())?;
        let dh = d / n_heads;
        let scale = S::one() / S::from_usize(dh).unwrap().sqrt();
        let qkv = self.qkv.forward(x)?;
        let mut ctx = Tensor2D::zeros(x.rows(), d);
        let mut probs = Vec::with_capacity(spans.len() * n_heads);
        for span in spans {
            let len = span.len();
            for h in 0..n_heads {
                let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
                let mut block = vec![S::zero(); len * len];
                for i in 0..len {
                    let q = &qkv.row(span.start + i)[qo..qo + dh];
                    let p = &mut block[i * len..i * len + i + 1];
                    for (j, pj) in p.iter_mut().enumerate() {
                        *pj = dot(q, &qkv.row(span.start + j)[ko..ko + dh]) * scale;
                    }
                    softmax_in_place(p);
                    let out = &mut ctx.row_mut(span.start + i)[qo..qo + dh];
                    for (j, &pj) in p.iter().enumerate() {
                        let v = &qkv.row(span.start + j)[vo..vo + dh];
                        for (o, &vv) in out.iter_mut().zip(v) {
                            *o += pj * vv;
                        }
                    }
                }
                probs.push(block);
            }
        }
        let y = self.out.forward(&ctx)?;
        Ok((
            y,
            AttentionCache {
                x: x.clone(),
                qkv,
                ctx,
                probs,
                lens: spans.iter().map(|s| s.len()).collect(),
            },
        ))
    }

    pub fn backward(
        &self,
        dy: &Tensor2D<S>,
        cache: &AttentionCache<S>,
        spans: &[Range<usize>],
        n_heads: usize,
        grads: &mut Attention<S>,
    ) -> Tensor2D<S> {
        let d = self.d();
        let dh = d / n_heads;
        let scale = S::one() / S::from_usize(dh).unwrap().sqrt();
        let dctx = self.out.backward(&cache.ctx, dy, &mut grads.out);
        let qkv = &cache.qkv;
        let mut dqkv = Tensor2D::zeros(qkv.rows(), 3 * d);
        let mut dp = Vec::new();
        for (si, span) in spans.iter().enumerate() {
            let len = span.len();
            for h in 0..n_heads {
                let block = &cache.probs[si * n_heads + h];
                let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
                for i in 0..len {
                    let ri = span.start + i;
                    let p = &block[i * len..i * len + i + 1];
                    let g = &dctx.row(ri)[qo..qo + dh];
                    dp.clear();
                    dp.extend((0..=i).map(|j| dot(g, &qkv.row(span.start + j)[vo..vo + dh])));
                    let weighted: S = p.iter().zip(&dp).map(|(&a, &b)| a * b).sum();
                    for j in 0..=i {
                        let rj = span.start + j;
                        let ds = p[j] * (dp[j] - weighted) * scale;
                        // dv_j += p_ij · dctx_i
                        for c in 0..dh {
                            dqkv[(rj, vo + c)] += p[j] * g[c];
                        }
                        // dq_i += ds · k_j ; dk_j += ds · q_i
                        for c in 0..dh {
                            let kc = qkv[(rj, ko + c)];
                            let qc = qkv[(ri, qo + c)];
                            dqkv[(ri, qo + c)] += ds * kc;
                            dqkv[(rj, ko + c)] += ds * qc;
                        }
                    }
                }
            }
        }
        self.qkv.backward(&cache.x, &dqkv, &mut grads.qkv)
    }
}

impl<S: Scalar> ParamSet<S> for Attention<S> {
    fn named(&self) -> Vec<(String, &Tensor2D<S>)> {
        let mut v = prefixed("qkv", self.qkv.named());
        v.extend(prefixed("out", self.out.named()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2D<S>> {
        let mut v = self.qkv.tensors_mut();
        v.extend(self.out.tensors_mut());
        v
    }
}

/// Single-sequence convenience wrapper.
pub fn causal_self_attention<S: Scalar>(
    x: &Tensor2D<S>,
    params: &Attention<S>,
    n_heads: usize,
) -> Result<Tensor2D<S>> {
    let spans = [0..x.rows()];
    params.forward(x, &spans, n_heads).map(|(y, _)| y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central_difference, max_relative_error};
    use crate::rng;

    fn setup(d: usize, seed: u64) -> Attention<f64> {
        let mut r = rng::stream(seed, "attn", 0);
        let mut a = Attention::new(d, 0.5, 0.5, &mut r);
        a.qkv.b = Tensor2D::randn(1, 3 * d, 0.1, &mut r);
        a.out.b = Tensor2D::randn(1, d, 0.1, &mut r);
        a
    }

    #[test]
    fn single_token_is_value_projection() {
        let a = setup(4, 1);
        let mut r = rng::stream(1, "x", 0);
        let x = Tensor2D::<f64>::randn(1, 4, 1.0, &mut r);
        let y = causal_self_attention(&x, &a, 2).unwrap();
        let qkv = a.qkv.forward(&x).unwrap();
        let v = Tensor2D::from_vec(1, 4, qkv.row(0)[8..12].to_vec()).unwrap();
        let expect = a.out.forward(&v).unwrap();
        assert!(y.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn rows_sum_to_one() {
        let a = setup(8, 2);
        let mut r = rng::stream(2, "x", 0);
        let x = Tensor2D::<f64>::randn(7, 8, 1.0, &mut r);
        let spans = [0..3, 3..7];
        let (_, cache) = a.forward(&x, &spans, 2).unwrap();
        for (s, span) in spans.iter().enumerate() {
            for h in 0..2 {
                for i in 0..span.len() {
                    let sum: f64 = cache.weights(s, h, 2, i).iter().sum();
                    assert!((sum - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn heads_must_divide_embedding() {
        let a = setup(6, 3);
        let x = Tensor2D::<f64>::zeros(2, 6);
        assert!(causal_self_attention(&x, &a, 4).is_err());
    }

    #[test]
    fn future_tokens_do_not_leak() {
        let a = setup(8, 4);
        let mut r = rng::stream(4, "x", 0);
        let x = Tensor2D::<f64>::randn(5, 8, 1.0, &mut r);
        let base = causal_self_attention(&x, &a, 4).unwrap();
        for j in 0..5 {
            let mut x2 = x.clone();
            for v in x2.row_mut(j) {
                *v += 3.0;
            }
            let y = causal_self_attention(&x2, &a, 4).unwrap();
            for i in 0..j {
                assert_eq!(y.row(i), base.row(i), "perturbing {j} changed {i}");
            }
        }
    }

    #[test]
    fn batched_equals_separate() {
        let a = setup(8, 5);
        let mut r = rng::stream(5, "x", 0);
        let x = Tensor2D::<f64>::randn(6, 8, 1.0, &mut r);
        let (y, _) = a.forward(&x, &[0..2, 2..6], 2).unwrap();
        let y1 = causal_self_attention(&x.slice_rows(0, 2), &a, 2).unwrap();
        let y2 = causal_self_attention(&x.slice_rows(2, 6), &a, 2).unwrap();
        assert_eq!(y.row(1), y1.row(1));
        assert_eq!(y.row(5), y2.row(3));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for &len in &[1usize, 2, 5] {
            let a = setup(8, 10 + len as u64);
            let mut r = rng::stream(6, "x", len as u64);
            let x = Tensor2D::<f64>::randn(len, 8, 1.0, &mut r);
            let c = Tensor2D::<f64>::randn(len, 8, 1.0, &mut r);
            let spans = [0..len];
            let loss_x = |xs: &[f64]| {
                let y = causal_self_attention(&Tensor2D::from_f64(len, 8, xs).unwrap(), &a, 2).unwrap();
                y.data().iter().zip(c.data()).map(|(p, q)| p * q).sum::<f64>()
            };
            let (_, cache) = a.forward(&x, &spans, 2).unwrap();
            let mut g = a.zeros_like();
            let dx = a.backward(&c, &cache, &spans, 2, &mut g);
            let num = central_difference(loss_x, &x.to_f64_vec(), 1e-5);
            assert!(max_relative_error(dx.data(), &num) <= 1e-4, "dx len={len}");

            let flat = a.to_flat();
            let loss_p = |p: &[f64]| {
                let mut a2 = a.clone();
                a2.load_flat(p).unwrap();
                let y = causal_self_attention(&x, &a2, 2).unwrap();
                y.data().iter().zip(c.data()).map(|(p, q)| p * q).sum::<f64>()
            };
            let num = central_difference(loss_p, &flat, 1e-5);
            assert!(max_relative_error(&g.to_flat(), &num) <= 1e-4, "params len={len}");
        }
    }
}
