use super::tensor::Tensor2D;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A fixed, ordered collection of named parameter tensors.
///
/// `named` and `tensors_mut` must enumerate tensors in the same order; the
/// optimizer and the flat views rely on it.
pub trait ParamSet<S: Scalar> {
    fn named(&self) -> Vec<(String, &Tensor2D<S>)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor2D<S>>;

    fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Same structure, every entry zero. Used as a gradient accumulator.
    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(S::zero());
        }
        z
    }

    fn zero_all(&mut self) {
        for t in self.tensors_mut() {
            t.fill(S::zero());
        }
    }

    fn to_flat(&self) -> Vec<f64> {
        self.named()
            .iter()
            .flat_map(|(_, t)| t.data().iter().map(|v| v.as_f64()))
            .collect()
    }

    fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.num_params();
        if flat.len() != total {
            return Err(Error::shape(format!(
                "flat parameter vector has {} values, expected {total}",
                flat.len()
            )));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            for (dst, &src) in t.data_mut().iter_mut().zip(&flat[off..off + n]) {
                *dst = S::of(src);
            }
            off += n;
        }
        Ok(())
    }

    /// Element-wise `self += other` over matching structures.
    fn accumulate(&mut self, other: &Self) {
        let src = other.named();
        for (dst, (_, s)) in self.tensors_mut().into_iter().zip(src) {
            dst.add_assign(s);
        }
    }

    fn scale_all(&mut self, s: S) {
        for t in self.tensors_mut() {
            t.scale(s);
        }
    }
}

pub(crate) fn prefixed<'a, S>(
    prefix: &str,
    items: Vec<(String, &'a Tensor2D<S>)>,
) -> Vec<(String, &'a Tensor2D<S>)> {
    items
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}
