//! The evaluation interface shared by every optimizer and estimator.

use crate::error::{Error, Result};

/// A deterministic scalar fitness over `dim()`-dimensional real vectors.
///
/// Implementations must be pure: the same input yields the same value
/// bit-for-bit, and evaluation is safe from any number of threads.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    /// Raw evaluation. Callers guarantee `z.len() == self.dim()`.
    fn value(&self, z: &[f64]) -> f64;
}

impl<T: Objective + ?Sized> Objective for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn value(&self, z: &[f64]) -> f64 {
        (**self).value(z)
    }
}

/// Evaluate and reject non-finite fitness.
pub fn checked_value<O: Objective + ?Sized>(objective: &O, z: &[f64]) -> Result<f64> {
    if z.len() != objective.dim() {
        return Err(Error::DimensionMismatch {
            expected: objective.dim(),
            got: z.len(),
        });
    }
    let v = objective.value(z);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation {
            point: z.to_vec(),
            value: v,
        })
    }
}

/// Wraps a closure as an [`Objective`].
#[derive(Clone, Copy)]
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, z: &[f64]) -> f64 {
        (self.f)(z)
    }
}

/// `scale * inner + offset`. Used to probe shift and scale invariances.
#[derive(Clone, Copy, Debug)]
pub struct Affine<O> {
    pub inner: O,
    pub scale: f64,
    pub offset: f64,
}

impl<O: Objective> Objective for Affine<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, z: &[f64]) -> f64 {
        self.scale * self.inner.value(z) + self.offset
    }
}
