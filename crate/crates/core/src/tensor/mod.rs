//! Dense tensors with reverse-mode differentiation.
//!
//! Networks are plain structs of [`ParamId`]s; their `forward` methods are
//! generic over the scalar, so the same model runs in `f32` for training and
//! in `f64` for finite-difference checks.

mod adam;
mod conv;
mod graph;
mod gradcheck;
pub mod nn;

pub use adam::{adam_step, adam_step_range, AdamConfig, AdamState};
pub use conv::{avg_pool2, conv2d, upsample2};
pub use gradcheck::{
    analytic_gradients, compare_gradients, gradcheck, numeric_gradients, GradFailure, GradcheckConfig,
    GradcheckReport, Objective, sample_picks,
};
pub use graph::{Gradients, Graph, ParamId, ParamStore, Var};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor; 4-D tensors are `(batch, channels, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(batch, channels, height, width)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::Shape(format!(
                "expected a (B, C, H, W) tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::Usage(format!(
                "item() on a tensor of shape {:?}",
                self.shape
            )))
        }
    }

    pub fn cast<S: Scalar>(&self) -> Tensor<S> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| S::of(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Batch item `i` of a rank-4 tensor as a `(1, C, H, W)` tensor.
    pub fn batch_item(&self, i: usize) -> Result<Self> {
        let (b, c, h, w) = self.dims4()?;
        if i >= b {
            return Err(Error::Index(format!("batch item {i} of {b}")));
        }
        let n = c * h * w;
        Ok(Self {
            shape: vec![1, c, h, w],
            data: self.data[i * n..(i + 1) * n].to_vec(),
        })
    }

    /// Concatenates rank-4 tensors along the batch axis.
    pub fn stack_batch(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack an empty batch".into()))?;
        let (_, c, h, w) = first.dims4()?;
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        let mut b = 0;
        for t in items {
            let (bi, ci, hi, wi) = t.dims4()?;
            if (ci, hi, wi) != (c, h, w) {
                return Err(Error::Shape(format!(
                    "batch items differ: {:?} vs {:?}",
                    t.shape, first.shape
                )));
            }
            b += bi;
            data.extend_from_slice(&t.data);
        }
        Ok(Self {
            shape: vec![b, c, h, w],
            data,
        })
    }

    /// Cyclic shift along the last (width) axis: output column `x` takes
    /// input column `(x - shift) mod W`.
    pub fn roll_width(&self, shift: i64) -> Self {
        let w = *self.shape.last().unwrap_or(&1);
        let s = shift.rem_euclid(w.max(1) as i64) as usize;
        let mut out = self.clone();
        if s == 0 {
            return out;
        }
        for (src, dst) in self.data.chunks_exact(w).zip(out.data.chunks_exact_mut(w)) {
            dst[s..].copy_from_slice(&src[..w - s]);
            dst[..s].copy_from_slice(&src[w - s..]);
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }
}
