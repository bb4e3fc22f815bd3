//! Dense rank-4 `f32` tensors and the fixed set of differentiable layers the
//! counting networks are built from.
//!
//! Every layer comes as a forward function plus a backward (adjoint) function
//! that maps an upstream gradient to gradients of the layer inputs. There is
//! no tape; the model module wires the backward calls by hand.

mod conv;
mod init;
mod ops;
mod pool;
mod upsample;

pub use conv::{conv2d, conv2d_backward, ConvFilter, ConvGrads};
pub use init::orthogonal_init;
pub use ops::{concat_channels, relu, relu_backward, split_channels};
pub use pool::{maxpool2x2, maxpool2x2_backward, PoolIndices};
pub use upsample::{upsample2x_bilinear, upsample2x_bilinear_backward};

use crate::error::{Error, Result};

/// Batch × channels × rows × cols, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Tensor { dims, data: vec![0.0; dims.iter().product()] }
    }

    pub fn filled(dims: [usize; 4], value: f32) -> Self {
        Tensor { dims, data: vec![value; dims.iter().product()] }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "tensor data has {} elements but dims {:?} need {}",
                data.len(),
                dims,
                expected
            )));
        }
        Ok(Tensor { dims, data })
    }

    #[inline]
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.dims[2]
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn offset(&self, b: usize, c: usize, i: usize, j: usize) -> usize {
        ((b * self.dims[1] + c) * self.dims[2] + i) * self.dims[3] + j
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, i: usize, j: usize) -> f32 {
        self.data[self.offset(b, c, i, j)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, i: usize, j: usize, v: f32) {
        let o = self.offset(b, c, i, j);
        self.data[o] = v;
    }

    /// Contiguous slice holding one batch item.
    pub fn item(&self, b: usize) -> &[f32] {
        let n = self.dims[1] * self.dims[2] * self.dims[3];
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [f32] {
        let n = self.dims[1] * self.dims[2] * self.dims[3];
        &mut self.data[b * n..(b + 1) * n]
    }

    /// Contiguous `rows × cols` plane of one (batch, channel) pair.
    pub fn plane(&self, b: usize, c: usize) -> &[f32] {
        let n = self.dims[2] * self.dims[3];
        let o = (b * self.dims[1] + c) * n;
        &self.data[o..o + n]
    }

    /// Sum of all entries, accumulated in `f64`.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// Inner product accumulated in `f64`.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_dims(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a as f64 * b as f64).sum())
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.expect_same_dims(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f32) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stack single-item tensors with equal `C×H×W` along the batch axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::invalid("cannot stack zero tensors"))?;
        let [_, c, h, w] = first.dims;
        let mut data = Vec::with_capacity(items.iter().map(|t| t.len()).sum());
        let mut batch = 0;
        for t in items {
            if t.dims[1..] != [c, h, w] {
                return Err(Error::invalid(format!("cannot stack tensor of dims {:?} with {:?}", t.dims, first.dims)));
            }
            batch += t.dims[0];
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec([batch, c, h, w], data)
    }

    pub(crate) fn expect_same_dims(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::invalid(format!("{what}: dims {:?} and {:?} differ", self.dims, other.dims)));
        }
        Ok(())
    }
}
