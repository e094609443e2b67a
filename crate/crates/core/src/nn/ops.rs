//! Dense layers with hand-written backward passes.

use rand::Rng;

use super::params::{prefixed, ParamSet};
use super::tensor::{matmul_a_bt_into, matmul_at_b_into, matmul_into, Tensor2D};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Affine map `y = x·W + b` with `W: in×out`, `b: 1×out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<S> {
    pub w: Tensor2D<S>,
    pub b: Tensor2D<S>,
}

/// Gradients produced by [`linear_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads<S> {
    pub dx: Tensor2D<S>,
    pub dw: Tensor2D<S>,
    pub db: Tensor2D<S>,
}

pub fn linear<S: Scalar>(x: &Tensor2D<S>, w: &Tensor2D<S>, b: &Tensor2D<S>) -> Result<Tensor2D<S>> {
    if x.cols() != w.rows() || b.shape() != (1, w.cols()) {
        return Err(Error::shape(format!(
            "linear: x {:?}, W {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let (n, k, m) = (x.rows(), w.rows(), w.cols());
    let mut out = Tensor2D::zeros(n, m);
    for i in 0..n {
        out.row_mut(i).copy_from_slice(b.data());
    }
    matmul_into(x.data(), w.data(), out.data_mut(), n, k, m);
    Ok(out)
}

pub fn linear_backward<S: Scalar>(
    x: &Tensor2D<S>,
    w: &Tensor2D<S>,
    dy: &Tensor2D<S>,
) -> Result<LinearGrads<S>> {
    if dy.shape() != (x.rows(), w.cols()) || x.cols() != w.rows() {
        return Err(Error::shape(format!(
            "linear_backward: x {:?}, W {:?}, dy {:?}",
            x.shape(),
            w.shape(),
            dy.shape()
        )));
    }
    let mut dw = Tensor2D::zeros(w.rows(), w.cols());
    let mut db = Tensor2D::zeros(1, w.cols());
    let dx = accumulate_linear_grads(x, w, dy, &mut dw, &mut db);
    Ok(LinearGrads { dx, dw, db })
}

fn accumulate_linear_grads<S: Scalar>(
    x: &Tensor2D<S>,
    w: &Tensor2D<S>,
    dy: &Tensor2D<S>,
    dw: &mut Tensor2D<S>,
    db: &mut Tensor2D<S>,
) -> Tensor2D<S> {
    let (n, k, m) = (x.rows(), w.rows(), w.cols());
    matmul_at_b_into(x.data(), dy.data(), dw.data_mut(), n, k, m);
    for i in 0..n {
        for (g, &d) in db.data_mut().iter_mut().zip(dy.row(i)) {
            *g += d;
        }
    }
    let mut dx = Tensor2D::zeros(n, k);
    matmul_a_bt_into(dy.data(), w.data(), dx.data_mut(), n, m, k);
    dx
}

impl<S: Scalar> Linear<S> {
    pub fn new(fan_in: usize, fan_out: usize, std: f64, rng: &mut impl Rng) -> Self {
        Linear {
            w: Tensor2D::randn(fan_in, fan_out, std, rng),
            b: Tensor2D::zeros(1, fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: Tensor2D::zeros(fan_in, fan_out),
            b: Tensor2D::zeros(1, fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &Tensor2D<S>) -> Result<Tensor2D<S>> {
        linear(x, &self.w, &self.b)
    }

    /// Accumulates parameter gradients into `grads` and returns `dx`.
    pub fn backward(&self, x: &Tensor2D<S>, dy: &Tensor2D<S>, grads: &mut Linear<S>) -> Tensor2D<S> {
        accumulate_linear_grads(x, &self.w, dy, &mut grads.w, &mut grads.b)
    }
}

impl<S: Scalar> ParamSet<S> for Linear<S> {
    fn named(&self) -> Vec<(String, &Tensor2D<S>)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2D<S>> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Row-wise layer normalization with learned gain and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<S> {
    pub gamma: Tensor2D<S>,
    pub beta: Tensor2D<S>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<S> {
    xhat: Tensor2D<S>,
    inv_std: Vec<S>,
}

impl<S: Scalar> LayerNormCache<S> {
    /// Normalized input before the affine step.
    pub fn normalized(&self) -> &Tensor2D<S> {
        &self.xhat
    }
}

impl<S: Scalar> LayerNorm<S> {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            gamma: Tensor2D::filled(1, d, S::one()),
            beta: Tensor2D::zeros(1, d),
        }
    }

    pub fn forward(&self, x: &Tensor2D<S>) -> (Tensor2D<S>, LayerNormCache<S>) {
        let (n, d) = x.shape();
        let eps = S::of(LAYER_NORM_EPS);
        let inv_d = S::one() / S::from_usize(d).unwrap();
        let mut xhat = Tensor2D::zeros(n, d);
        let mut y = Tensor2D::zeros(n, d);
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = x.row(i);
            let mean = row.iter().copied().sum::<S>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_d;
            let is = S::one() / (var + eps).sqrt();
            inv_std.push(is);
            let xh = xhat.row_mut(i);
            for (o, &v) in xh.iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            let yr = y.row_mut(i);
            for j in 0..d {
                yr[j] = self.gamma.data()[j] * xhat[(i, j)] + self.beta.data()[j];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, dy: &Tensor2D<S>, cache: &LayerNormCache<S>, grads: &mut LayerNorm<S>) -> Tensor2D<S> {
        let (n, d) = dy.shape();
        let inv_d = S::one() / S::from_usize(d).unwrap();
        let mut dx = Tensor2D::zeros(n, d);
        let mut dxhat = vec![S::zero(); d];
        for i in 0..n {
            let dyr = dy.row(i);
            let xh = cache.xhat.row(i);
            let mut mean_dxhat = S::zero();
            let mut mean_dxhat_xhat = S::zero();
            for j in 0..d {
                grads.gamma.data_mut()[j] += dyr[j] * xh[j];
                grads.beta.data_mut()[j] += dyr[j];
                dxhat[j] = dyr[j] * self.gamma.data()[j];
                mean_dxhat += dxhat[j];
                mean_dxhat_xhat += dxhat[j] * xh[j];
            }
            mean_dxhat *= inv_d;
            mean_dxhat_xhat *= inv_d;
            let is = cache.inv_std[i];
            for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                *o = is * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
            }
        }
        dx
    }
}

impl<S: Scalar> ParamSet<S> for LayerNorm<S> {
    fn named(&self) -> Vec<(String, &Tensor2D<S>)> {
        vec![("gamma".into(), &self.gamma), ("beta".into(), &self.beta)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2D<S>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// tanh-approximated GELU.
pub fn gelu<S: Scalar>(x: S) -> S {
    let half = S::of(0.5);
    let inner = S::of(GELU_C) * (x + S::of(GELU_A) * x * x * x);
    half * x * (S::one() + inner.tanh())
}

pub fn gelu_grad<S: Scalar>(x: S) -> S {
    let half = S::of(0.5);
    let c = S::of(GELU_C);
    let a = S::of(GELU_A);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let sech2 = S::one() - t * t;
    half * (S::one() + t) + half * x * sech2 * c * (S::one() + S::of(3.0) * a * x * x)
}

pub fn gelu_forward<S: Scalar>(x: &Tensor2D<S>) -> Tensor2D<S> {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
    y
}

/// `dx = dy ⊙ gelu'(x)`
pub fn gelu_backward<S: Scalar>(x: &Tensor2D<S>, dy: &Tensor2D<S>) -> Tensor2D<S> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        *d *= gelu_grad(v);
    }
    dx
}

/// Two-layer perceptron `in → hidden → out` with GELU between.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<S> {
    pub fc: Linear<S>,
    pub proj: Linear<S>,
}

#[derive(Debug, Clone)]
pub struct MlpCache<S> {
    x: Tensor2D<S>,
    pre: Tensor2D<S>,
    act: Tensor2D<S>,
}

impl<S: Scalar> Mlp<S> {
    pub fn forward(&self, x: &Tensor2D<S>) -> Result<(Tensor2D<S>, MlpCache<S>)> {
        let pre = self.fc.forward(x)?;
        let act = gelu_forward(&pre);
        let y = self.proj.forward(&act)?;
        Ok((
            y,
            MlpCache {
                x: x.clone(),
                pre,
                act,
            },
        ))
    }

    pub fn backward(&self, dy: &Tensor2D<S>, cache: &MlpCache<S>, grads: &mut Mlp<S>) -> Tensor2D<S> {
        let dact = self.proj.backward(&cache.act, dy, &mut grads.proj);
        let dpre = gelu_backward(&cache.pre, &dact);
        self.fc.backward(&cache.x, &dpre, &mut grads.fc)
    }
}

impl<S: Scalar> ParamSet<S> for Mlp<S> {
    fn named(&self) -> Vec<(String, &Tensor2D<S>)> {
        let mut v = prefixed("fc", self.fc.named());
        v.extend(prefixed("proj", self.proj.named()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2D<S>> {
        let mut v = self.fc.tensors_mut();
        v.extend(self.proj.tensors_mut());
        v
    }
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place<S: Scalar>(v: &mut [S]) {
    let max = v.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}
