//! ×2 bilinear upsampling with half-pixel centres and edge clamping.
//!
//! Output index `o` samples the source at `o/2 - 1/4`, so along each axis
//!
//! ```text
//! out[2m]   = 0.75·in[m] + 0.25·in[max(m-1, 0)]
//! out[2m+1] = 0.75·in[m] + 0.25·in[min(m+1, n-1)]
//! ```
//!
//! and the 2-D map is the separable product of the row and column rules.
//! Every source pixel receives total weight 4, so constants and the mean
//! are preserved.

use super::Tensor;
use crate::error::Result;

/// `(near, far)` source taps of output index `o` along an axis of length `n`.
#[inline]
fn taps(o: usize, n: usize) -> (usize, usize) {
    let m = o / 2;
    let far = if o.is_multiple_of(2) { m.saturating_sub(1) } else { (m + 1).min(n - 1) };
    (m, far)
}

const NEAR: f32 = 0.75;
const FAR: f32 = 0.25;

pub fn upsample2x_bilinear(input: &Tensor) -> Tensor {
    let [n, c, h, w] = input.dims();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    if h == 0 || w == 0 {
        return out;
    }
    // Column pass into a buffer of h × ow, then row pass.
    let mut tmp = vec![0.0f32; h * ow];
    let x = input.data();
    let y = out.data_mut();
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        for i in 0..h {
            let srow = &src[i * w..(i + 1) * w];
            let trow = &mut tmp[i * ow..(i + 1) * ow];
            for (oj, t) in trow.iter_mut().enumerate() {
                let (near, far) = taps(oj, w);
                *t = NEAR * srow[near] + FAR * srow[far];
            }
        }
        let dst = &mut y[plane * oh * ow..(plane + 1) * oh * ow];
        for oi in 0..oh {
            let (near, far) = taps(oi, h);
            let rn = &tmp[near * ow..(near + 1) * ow];
            let rf = &tmp[far * ow..(far + 1) * ow];
            for ((d, &a), &b) in dst[oi * ow..(oi + 1) * ow].iter_mut().zip(rn).zip(rf) {
                *d = NEAR * a + FAR * b;
            }
        }
    }
    out
}

/// Exact transpose of [`upsample2x_bilinear`].
pub fn upsample2x_bilinear_backward(grad_out: &Tensor) -> Result<Tensor> {
    let [n, c, oh, ow] = grad_out.dims();
    let (h, w) = (oh / 2, ow / 2);
    let mut grad_in = Tensor::zeros([n, c, h, w]);
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(crate::error::Error::invalid(format!(
            "upsample2x_bilinear_backward: gradient dims {oh}x{ow} are not even"
        )));
    }
    if h == 0 || w == 0 {
        return Ok(grad_in);
    }
    let mut tmp = vec![0.0f32; h * ow];
    let g = grad_out.data();
    let gi = grad_in.data_mut();
    for plane in 0..n * c {
        let src = &g[plane * oh * ow..(plane + 1) * oh * ow];
        tmp.fill(0.0);
        for oi in 0..oh {
            let (near, far) = taps(oi, h);
            let srow = &src[oi * ow..(oi + 1) * ow];
            for (t, &s) in tmp[near * ow..(near + 1) * ow].iter_mut().zip(srow) {
                *t += NEAR * s;
            }
            for (t, &s) in tmp[far * ow..(far + 1) * ow].iter_mut().zip(srow) {
                *t += FAR * s;
            }
        }
        let dst = &mut gi[plane * h * w..(plane + 1) * h * w];
        for i in 0..h {
            let trow = &tmp[i * ow..(i + 1) * ow];
            let drow = &mut dst[i * w..(i + 1) * w];
            for (oj, &t) in trow.iter().enumerate() {
                let (near, far) = taps(oj, w);
                drow[near] += NEAR * t;
                drow[far] += FAR * t;
            }
        }
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_are_preserved() {
        let x = Tensor::filled([1, 2, 3, 5], 0.7);
        let y = upsample2x_bilinear(&x);
        assert_eq!(y.dims(), [1, 2, 6, 10]);
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-7));
    }

    #[test]
    fn two_by_two_weight_table() {
        // Rows of the 4×4 result, worked out from the tap rule by hand:
        // axis weights are [1,0], [.75,.25], [.25,.75], [0,1].
        let x = Tensor::from_vec([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = upsample2x_bilinear(&x);
        #[rustfmt::skip]
        let expected = [
            0.0, 0.25, 0.75, 1.0,
            0.5, 0.75, 1.25, 1.5,
            1.5, 1.75, 2.25, 2.5,
            2.0, 2.25, 2.75, 3.0,
        ];
        assert_eq!(y.data(), &expected);
    }

    #[test]
    fn single_pixel_broadcasts() {
        let x = Tensor::filled([1, 1, 1, 1], 3.0);
        assert_eq!(upsample2x_bilinear(&x).data(), &[3.0; 4]);
    }

    #[test]
    fn mean_is_preserved() {
        let x = Tensor::from_vec([1, 1, 3, 4], (0..12).map(|v| (v * v) as f32).collect()).unwrap();
        let y = upsample2x_bilinear(&x);
        assert!((y.sum() / 4.0 - x.sum()).abs() < 1e-4);
    }
}
