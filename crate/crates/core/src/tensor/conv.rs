use super::Tensor;
use crate::error::{Error, Result};

/// Upper bound on the number of `f32` entries in one im2col buffer. Large
/// images are processed in bands of rows so the buffer stays bounded.
const COL_BUDGET: usize = 1 << 22;

/// Square convolution kernel bank with per-output-channel bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvFilter {
    /// `(out_channels, in_channels, k, k)`.
    pub weights: Tensor,
    pub bias: Vec<f32>,
}

impl ConvFilter {
    pub fn new(weights: Tensor, bias: Vec<f32>) -> Result<Self> {
        let [out, _, kh, kw] = weights.dims();
        if kh != kw || kh % 2 == 0 {
            return Err(Error::invalid(format!("convolution kernel must be square with odd size, got {kh}x{kw}")));
        }
        if bias.len() != out {
            return Err(Error::invalid(format!("bias has {} entries for {out} output channels", bias.len())));
        }
        Ok(ConvFilter { weights, bias })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, k: usize) -> Self {
        ConvFilter { weights: Tensor::zeros([out_channels, in_channels, k, k]), bias: vec![0.0; out_channels] }
    }

    pub fn out_channels(&self) -> usize {
        self.weights.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.dims()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.weights.dims()[2]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Gradients produced by [`conv2d_backward`].
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub filter: ConvFilter,
}

/// "Same" convolution with zero padding of `k/2` on every side, stride 1.
pub fn conv2d(input: &Tensor, filter: &ConvFilter) -> Result<Tensor> {
    check_channels(input, filter)?;
    let [batch, in_c, h, w] = input.dims();
    let out_c = filter.out_channels();
    let k = filter.kernel_size();
    let q = in_c * k * k;
    let plane = h * w;
    let mut out = Tensor::zeros([batch, out_c, h, w]);
    if plane == 0 {
        return Ok(out);
    }

    let mut col = Vec::new();
    for b in 0..batch {
        let x = input.item(b);
        let y = out.item_mut(b);
        for (o, &bias) in filter.bias.iter().enumerate() {
            y[o * plane..(o + 1) * plane].fill(bias);
        }
        for (r0, r1) in bands(q, h, w) {
            let n = (r1 - r0) * w;
            let (src, rs): (&[f32], usize) = if k == 1 {
                (&x[r0 * w..], plane)
            } else {
                im2col(x, in_c, h, w, k, r0, r1, &mut col);
                (&col, n)
            };
            gemm(
                out_c,
                q,
                n,
                Mat::new(filter.weights.data(), q, 1),
                Mat::new(src, rs, 1),
                1.0,
                MatMut::new(&mut y[r0 * w..], plane, 1),
            );
        }
    }
    Ok(out)
}

/// Adjoint of [`conv2d`]: gradients w.r.t. input, weights and bias given the
/// gradient of a scalar w.r.t. the convolution output.
pub fn conv2d_backward(input: &Tensor, filter: &ConvFilter, grad_out: &Tensor) -> Result<ConvGrads> {
    check_channels(input, filter)?;
    let [batch, in_c, h, w] = input.dims();
    let out_c = filter.out_channels();
    if grad_out.dims() != [batch, out_c, h, w] {
        return Err(Error::invalid(format!(
            "conv2d_backward: upstream gradient dims {:?}, expected {:?}",
            grad_out.dims(),
            [batch, out_c, h, w]
        )));
    }
    let k = filter.kernel_size();
    let q = in_c * k * k;
    let plane = h * w;

    let mut grad_in = Tensor::zeros(input.dims());
    let mut grad_filter = ConvFilter::zeros(out_c, in_c, k);
    if plane == 0 {
        return Ok(ConvGrads { input: grad_in, filter: grad_filter });
    }

    let mut col = Vec::new();
    let mut dcol = Vec::new();
    for b in 0..batch {
        let x = input.item(b);
        let g = grad_out.item(b);
        for (o, db) in grad_filter.bias.iter_mut().enumerate() {
            *db += g[o * plane..(o + 1) * plane].iter().map(|&v| v as f64).sum::<f64>() as f32;
        }
        for (r0, r1) in bands(q, h, w) {
            let n = (r1 - r0) * w;
            let g_band = Mat::new(&g[r0 * w..], plane, 1);

            // dW += G · colᵀ
            let (src, rs): (&[f32], usize) = if k == 1 {
                (&x[r0 * w..], plane)
            } else {
                im2col(x, in_c, h, w, k, r0, r1, &mut col);
                (&col, n)
            };
            gemm(
                out_c,
                n,
                q,
                g_band,
                Mat { data: src, rs: 1, cs: rs },
                1.0,
                MatMut::new(grad_filter.weights.data_mut(), q, 1),
            );

            // dcol = Wᵀ · G
            let gi = grad_in.item_mut(b);
            if k == 1 {
                gemm(
                    q,
                    out_c,
                    n,
                    Mat { data: filter.weights.data(), rs: 1, cs: q },
                    g_band,
                    0.0,
                    MatMut::new(&mut gi[r0 * w..], plane, 1),
                );
            } else {
                dcol.clear();
                dcol.resize(q * n, 0.0);
                gemm(
                    q,
                    out_c,
                    n,
                    Mat { data: filter.weights.data(), rs: 1, cs: q },
                    g_band,
                    0.0,
                    MatMut::new(&mut dcol, n, 1),
                );
                col2im_add(&dcol, in_c, h, w, k, r0, r1, gi);
            }
        }
    }
    Ok(ConvGrads { input: grad_in, filter: grad_filter })
}

fn check_channels(input: &Tensor, filter: &ConvFilter) -> Result<()> {
    if input.channels() != filter.in_channels() {
        return Err(Error::invalid(format!(
            "conv2d: input has {} channels, filter expects {}",
            input.channels(),
            filter.in_channels()
        )));
    }
    Ok(())
}

/// Row bands `[r0, r1)` whose im2col buffer fits in [`COL_BUDGET`].
fn bands(q: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    let rows = (COL_BUDGET / (q * w).max(1)).clamp(1, h.max(1));
    (0..h).step_by(rows).map(move |r0| (r0, (r0 + rows).min(h)))
}

/// Unfold rows `[r0, r1)` of one `C×H×W` item into a `(C·k·k) × ((r1-r0)·W)`
/// matrix, zero where the window leaves the image.
#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f32], c: usize, h: usize, w: usize, k: usize, r0: usize, r1: usize, col: &mut Vec<f32>) {
    let n = (r1 - r0) * w;
    let pad = (k / 2) as isize;
    col.clear();
    col.resize(c * k * k * n, 0.0);
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        for u in 0..k {
            for v in 0..k {
                let row = &mut col[((ci * k + u) * k + v) * n..][..n];
                let dj = v as isize - pad;
                let j_lo = (-dj).max(0) as usize;
                let j_hi = (w as isize - dj).min(w as isize).max(0) as usize;
                for i in r0..r1 {
                    let si = i as isize + u as isize - pad;
                    if si < 0 || si >= h as isize || j_lo >= j_hi {
                        continue;
                    }
                    let srow = &src[si as usize * w..(si as usize + 1) * w];
                    let drow = &mut row[(i - r0) * w..(i - r0 + 1) * w];
                    let s0 = (j_lo as isize + dj) as usize;
                    drow[j_lo..j_hi].copy_from_slice(&srow[s0..s0 + (j_hi - j_lo)]);
                }
            }
        }
    }
}

/// Transpose of [`im2col`], accumulating into `gi`.
#[allow(clippy::too_many_arguments)]
fn col2im_add(dcol: &[f32], c: usize, h: usize, w: usize, k: usize, r0: usize, r1: usize, gi: &mut [f32]) {
    let n = (r1 - r0) * w;
    let pad = (k / 2) as isize;
    for ci in 0..c {
        let dst = &mut gi[ci * h * w..(ci + 1) * h * w];
        for u in 0..k {
            for v in 0..k {
                let row = &dcol[((ci * k + u) * k + v) * n..][..n];
                let dj = v as isize - pad;
                let j_lo = (-dj).max(0) as usize;
                let j_hi = (w as isize - dj).min(w as isize).max(0) as usize;
                for i in r0..r1 {
                    let si = i as isize + u as isize - pad;
                    if si < 0 || si >= h as isize || j_lo >= j_hi {
                        continue;
                    }
                    let srow = &row[(i - r0) * w..(i - r0 + 1) * w];
                    let s0 = (j_lo as isize + dj) as usize;
                    let drow = &mut dst[si as usize * w + s0..][..j_hi - j_lo];
                    for (d, &s) in drow.iter_mut().zip(&srow[j_lo..j_hi]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy)]
struct Mat<'a> {
    data: &'a [f32],
    rs: usize,
    cs: usize,
}

impl<'a> Mat<'a> {
    fn new(data: &'a [f32], rs: usize, cs: usize) -> Self {
        Mat { data, rs, cs }
    }
}

struct MatMut<'a> {
    data: &'a mut [f32],
    rs: usize,
    cs: usize,
}

impl<'a> MatMut<'a> {
    fn new(data: &'a mut [f32], rs: usize, cs: usize) -> Self {
        MatMut { data, rs, cs }
    }
}

fn last_index(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    (rows - 1) * rs + (cols - 1) * cs
}

/// `C ← A·B + beta·C` with `A: m×k`, `B: k×n`, `C: m×n`.
fn gemm(m: usize, k: usize, n: usize, a: Mat<'_>, b: Mat<'_>, beta: f32, c: MatMut<'_>) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(last_index(m, n, c.rs, c.cs) < c.data.len());
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c.data[i * c.rs + j * c.cs] *= beta;
            }
        }
        return;
    }
    assert!(last_index(m, k, a.rs, a.cs) < a.data.len());
    assert!(last_index(k, n, b.rs, b.cs) < b.data.len());
    // SAFETY: the asserts above bound every index sgemm touches, and `c`
    // is a unique borrow that cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        );
    }
}
