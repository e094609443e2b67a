//! Frozen toy vision encoder and the trainable projector.
//!
//! Pixels are cut into non-overlapping `P×P` patches and mapped to `d_v`
//! dimensions by a seeded random linear map that is never trained. The
//! resulting patch grid is pooled to a fixed `t×t` grid and each pooled
//! vector is projected into the backbone's embedding space.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ImagePayload;
use crate::nn::{Linear, Mlp, Tensor2D};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub patch_size: usize,
    pub channels: usize,
    /// Patch embedding width.
    pub d_v: usize,
    /// Pooled grid side; each image becomes `t²` tokens.
    pub t: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            patch_size: 4,
            channels: 3,
            d_v: 32,
            t: 4,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn tokens_per_image(&self) -> usize {
        self.t * self.t
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.channels == 0 || self.d_v == 0 || self.t == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// An `h×w` grid of `dim`-dimensional vectors, stored row-major as an
/// `(h·w) × dim` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid<S> {
    pub h: usize,
    pub w: usize,
    pub vecs: Tensor2D<S>,
}

impl<S: Scalar> PatchGrid<S> {
    pub fn new(h: usize, w: usize, vecs: Tensor2D<S>) -> Result<Self> {
        if h == 0 || w == 0 || vecs.rows() != h * w {
            return Err(Error::shape(format!("{h}x{w} grid with {} vectors", vecs.rows())));
        }
        Ok(PatchGrid { h, w, vecs })
    }

    pub fn dim(&self) -> usize {
        self.vecs.cols()
    }

    pub fn cell(&self, i: usize, j: usize) -> &[S] {
        self.vecs.row(i * self.w + j)
    }

    /// Unweighted mean over all cells.
    pub fn mean(&self) -> Vec<S> {
        let mut acc = vec![S::zero(); self.dim()];
        for r in 0..self.vecs.rows() {
            for (a, &v) in acc.iter_mut().zip(self.vecs.row(r)) {
                *a += v;
            }
        }
        let n = S::from_usize(self.vecs.rows()).unwrap();
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

/// Seed-determined patch embedding. Holds no trainable state.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenEncoder<S> {
    cfg: EncoderConfig,
    weight: Tensor2D<S>,
    bias: Vec<S>,
}

impl<S: Scalar> FrozenEncoder<S> {
    pub fn new(cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::stream(cfg.seed, "frozen-encoder", 0);
        let fan_in = cfg.patch_dim();
        let weight = Tensor2D::randn(fan_in, cfg.d_v, 1.0 / (fan_in as f64).sqrt(), &mut r);
        let bias = (0..cfg.d_v)
            .map(|_| S::of(0.02 * (r.random::<f64>() * 2.0 - 1.0)))
            .collect();
        Ok(FrozenEncoder {
            cfg: cfg.clone(),
            weight,
            bias,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn bias(&self) -> &[S] {
        &self.bias
    }

    /// Raw patch grid for one payload; precomputed grids pass through.
    pub fn patchify_embed(&self, image: &ImagePayload) -> Result<PatchGrid<S>> {
        match image {
            ImagePayload::PatchGrid { h, w, dim, data } => {
                if *dim != self.cfg.d_v {
                    return Err(Error::shape(format!(
                        "precomputed patch grid has dim {dim}, encoder d_v is {}",
                        self.cfg.d_v
                    )));
                }
                PatchGrid::new(*h, *w, Tensor2D::from_f64(h * w, *dim, data)?)
            }
            ImagePayload::Pixels {
                channels,
                height,
                width,
                data,
            } => {
                let p = self.cfg.patch_size;
                if *channels != self.cfg.channels {
                    return Err(Error::shape(format!(
                        "image has {channels} channels, encoder expects {}",
                        self.cfg.channels
                    )));
                }
                if height % p != 0 || width % p != 0 || *height == 0 || *width == 0 {
                    return Err(Error::shape(format!(
                        "{height}x{width} image is not divisible into {p}x{p} patches"
                    )));
                }
                if data.len() != channels * height * width {
                    return Err(Error::shape("pixel payload length does not match its shape"));
                }
                let (gh, gw) = (height / p, width / p);
                let mut patches = Tensor2D::<S>::zeros(gh * gw, self.cfg.patch_dim());
                for pi in 0..gh {
                    for pj in 0..gw {
                        let row = patches.row_mut(pi * gw + pj);
                        let mut k = 0;
                        for c in 0..*channels {
                            for y in 0..p {
                                let base = c * height * width + (pi * p + y) * width + pj * p;
                                for x in 0..p {
                                    row[k] = S::of(data[base + x]);
                                    k += 1;
                                }
                            }
                        }
                    }
                }
                let mut vecs = patches.matmul(&self.weight)?;
                for r in 0..vecs.rows() {
                    for (v, &b) in vecs.row_mut(r).iter_mut().zip(&self.bias) {
                        *v += b;
                    }
                }
                PatchGrid::new(gh, gw, vecs)
            }
        }
    }

    /// Patchify then pool to the configured `t×t` grid.
    pub fn pooled(&self, image: &ImagePayload) -> Result<PatchGrid<S>> {
        adaptive_avg_pool_2d(&self.patchify_embed(image)?, self.cfg.t)
    }
}

/// Free-function form of [`FrozenEncoder::patchify_embed`].
pub fn patchify_embed<S: Scalar>(image: &ImagePayload, cfg: &EncoderConfig) -> Result<PatchGrid<S>> {
    FrozenEncoder::new(cfg)?.patchify_embed(image)
}

/// Output cell `(i, j)` is the mean of input rows `⌊iH/t⌋..⌈(i+1)H/t⌉` and
/// columns `⌊jW/t⌋..⌈(j+1)W/t⌉`.
pub fn adaptive_avg_pool_2d<S: Scalar>(grid: &PatchGrid<S>, t: usize) -> Result<PatchGrid<S>> {
    if t == 0 || grid.h < t || grid.w < t {
        return Err(Error::shape(format!(
            "cannot pool a {}x{} grid to {t}x{t}",
            grid.h, grid.w
        )));
    }
    let bins = |n: usize, i: usize| (i * n / t, ((i + 1) * n).div_ceil(t));
    let dim = grid.dim();
    let mut out = Tensor2D::zeros(t * t, dim);
    for i in 0..t {
        let (r0, r1) = bins(grid.h, i);
        for j in 0..t {
            let (c0, c1) = bins(grid.w, j);
            let cell = out.row_mut(i * t + j);
            for r in r0..r1 {
                for c in c0..c1 {
                    for (o, &v) in cell.iter_mut().zip(grid.cell(r, c)) {
                        *o += v;
                    }
                }
            }
            let n = S::from_usize((r1 - r0) * (c1 - c0)).unwrap();
            cell.iter_mut().for_each(|o| *o /= n);
        }
    }
    PatchGrid::new(t, t, out)
}

/// Trainable `d_v → d → d` projector.
pub type Projector<S> = Mlp<S>;

pub fn new_projector<S: Scalar>(d_v: usize, d: usize, std: f64, rng: &mut impl Rng) -> Projector<S> {
    Mlp {
        fc: Linear::new(d_v, d, std, rng),
        proj: Linear::new(d, d, std, rng),
    }
}

/// Map a pooled `t×t` grid to `t²` embeddings, row-major over the grid.
pub fn project<S: Scalar>(grid: &PatchGrid<S>, mlp: &Projector<S>) -> Result<Tensor2D<S>> {
    if grid.dim() != mlp.fc.fan_in() {
        return Err(Error::shape(format!(
            "projector expects {}-dim vectors, grid has {}",
            mlp.fc.fan_in(),
            grid.dim()
        )));
    }
    Ok(mlp.forward(&grid.vecs)?.0)
}
