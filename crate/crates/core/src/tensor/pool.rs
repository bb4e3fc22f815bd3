use super::Tensor;
use crate::error::{Error, Result};

/// Argmax position (flat offset into the pooled input) of every output cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    input_dims: [usize; 4],
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn input_dims(&self) -> [usize; 4] {
        self.input_dims
    }

    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// Non-overlapping 2×2 max pooling. Ties go to the first maximum in
/// row-major window order.
pub fn maxpool2x2(input: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let [n, c, h, w] = input.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!("maxpool2x2 needs even rows and cols, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(out.len());
    let x = input.data();
    let y = out.data_mut();
    let mut k = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let top = base + 2 * i * w + 2 * j;
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                y[k] = x[best];
                argmax.push(best);
                k += 1;
            }
        }
    }
    Ok((out, PoolIndices { input_dims: input.dims(), argmax }))
}

/// Routes each upstream gradient entry to the recorded argmax.
pub fn maxpool2x2_backward(indices: &PoolIndices, grad_out: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = indices.input_dims;
    if grad_out.dims() != [n, c, h / 2, w / 2] {
        return Err(Error::invalid(format!(
            "maxpool2x2_backward: gradient dims {:?} do not match pooled dims {:?}",
            grad_out.dims(),
            [n, c, h / 2, w / 2]
        )));
    }
    let mut grad_in = Tensor::zeros(indices.input_dims);
    let gi = grad_in.data_mut();
    for (&pos, &g) in indices.argmax.iter().zip(grad_out.data()) {
        gi[pos] += g;
    }
    Ok(grad_in)
}
