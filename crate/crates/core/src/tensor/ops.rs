use super::Tensor;
use crate::error::{Error, Result};

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = v.max(0.0);
    }
    out
}

/// Passes `grad_out` through where `input > 0`. The subgradient at exactly
/// zero is taken as zero.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    input.expect_same_dims(grad_out, "relu_backward")?;
    let data = input.data().iter().zip(grad_out.data()).map(|(&x, &g)| if x > 0.0 { g } else { 0.0 }).collect();
    Tensor::from_vec(input.dims(), data)
}

/// Channel-wise concatenation, `a`'s channels first.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [ba, ca, ha, wa] = a.dims();
    let [bb, cb, hb, wb] = b.dims();
    if (ba, ha, wa) != (bb, hb, wb) {
        return Err(Error::invalid(format!(
            "concat_channels: dims {:?} and {:?} disagree outside the channel axis",
            a.dims(),
            b.dims()
        )));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..ba {
        data.extend_from_slice(a.item(n));
        data.extend_from_slice(b.item(n));
    }
    Tensor::from_vec([ba, ca + cb, ha, wa], data)
}

/// Adjoint of [`concat_channels`]: split a gradient into its first
/// `first_channels` channels and the rest.
pub fn split_channels(grad: &Tensor, first_channels: usize) -> Result<(Tensor, Tensor)> {
    let [n, c, h, w] = grad.dims();
    if first_channels > c {
        return Err(Error::invalid(format!("split_channels: cannot take {first_channels} channels from {c}")));
    }
    let split = first_channels * h * w;
    let mut a = Vec::with_capacity(n * split);
    let mut b = Vec::with_capacity(grad.len() - n * split);
    for i in 0..n {
        let item = grad.item(i);
        a.extend_from_slice(&item[..split]);
        b.extend_from_slice(&item[split..]);
    }
    Ok((Tensor::from_vec([n, first_channels, h, w], a)?, Tensor::from_vec([n, c - first_channels, h, w], b)?))
}
