//! Reference implementations written directly from the definitions, without
//! sharing code with the library.

#![allow(dead_code)]

use std::path::PathBuf;

use cellcount::density::{Centroid, CentroidSet};
use cellcount::tensor::{ConvFilter, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn random_tensor<R: Rng>(dims: [usize; 4], rng: &mut R) -> Tensor {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()).unwrap()
}

pub fn random_filter<R: Rng>(out_c: usize, in_c: usize, k: usize, with_bias: bool, rng: &mut R) -> ConvFilter {
    let w = random_tensor([out_c, in_c, k, k], rng);
    let bias = if with_bias { (0..out_c).map(|_| rng.sample(StandardNormal)).collect() } else { vec![0.0; out_c] };
    ConvFilter::new(w, bias).unwrap()
}

pub fn inner(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.dims(), b.dims());
    a.data().iter().zip(b.data()).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn abs_inner(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 * y as f64).abs()).sum()
}

/// Direct six-loop "same" convolution in `f64`.
pub fn naive_conv(x: &Tensor, f: &ConvFilter) -> Vec<f64> {
    let [n, c, h, w] = x.dims();
    let [o, _, k, _] = f.weights.dims();
    let p = (k / 2) as isize;
    let mut out = vec![0.0; n * o * h * w];
    for b in 0..n {
        for oc in 0..o {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = f.bias[oc] as f64;
                    for ic in 0..c {
                        for di in 0..k {
                            for dj in 0..k {
                                let si = i as isize + di as isize - p;
                                let sj = j as isize + dj as isize - p;
                                if si < 0 || sj < 0 || si >= h as isize || sj >= w as isize {
                                    continue;
                                }
                                acc += f.weights.get(oc, ic, di, dj) as f64
                                    * x.get(b, ic, si as usize, sj as usize) as f64;
                            }
                        }
                    }
                    out[((b * o + oc) * h + i) * w + j] = acc;
                }
            }
        }
    }
    out
}

/// Sum of `|w·x|` over every product entering each output, the natural
/// scale for the rounding error of that output.
pub fn naive_conv_magnitude(x: &Tensor, f: &ConvFilter) -> Vec<f64> {
    let abs_x = Tensor::from_vec(x.dims(), x.data().iter().map(|v| v.abs()).collect()).unwrap();
    let abs_w = Tensor::from_vec(f.weights.dims(), f.weights.data().iter().map(|v| v.abs()).collect()).unwrap();
    let abs_f = ConvFilter::new(abs_w, f.bias.iter().map(|b| b.abs()).collect()).unwrap();
    naive_conv(&abs_x, &abs_f)
}

/// Bilinear ×2 upsampling by interpolating at the source coordinate
/// `(o + 0.5) / 2 - 0.5`, clamped to the image.
pub fn naive_upsample(x: &Tensor) -> Vec<f64> {
    let [n, c, h, w] = x.dims();
    let coord = |o: usize, len: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Vec::with_capacity(n * c * 4 * h * w);
    for b in 0..n {
        for ch in 0..c {
            for oi in 0..2 * h {
                let (r0, r1, fr) = coord(oi, h);
                for oj in 0..2 * w {
                    let (c0, c1, fc) = coord(oj, w);
                    let v = |r: usize, cc: usize| x.get(b, ch, r, cc) as f64;
                    let top = v(r0, c0) * (1.0 - fc) + v(r0, c1) * fc;
                    let bottom = v(r1, c0) * (1.0 - fc) + v(r1, c1) * fc;
                    out.push(top * (1.0 - fr) + bottom * fr);
                }
            }
        }
    }
    out
}

/// Density map of a centroid set: a Gaussian of width `sigma` over the
/// `(2k+1)²` window, normalised over the full window and cut at the border.
pub fn naive_density(rows: usize, cols: usize, points: &[Centroid], sigma: f64, k: i64) -> Vec<f64> {
    let weight = |dx: i64, dy: i64| (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
    let mut z = 0.0;
    for dy in -k..=k {
        for dx in -k..=k {
            z += weight(dx, dy);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for p in points {
        for dy in -k..=k {
            for dx in -k..=k {
                let (r, c) = (p.y as i64 + dy, p.x as i64 + dx);
                if r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols {
                    out[r as usize * cols + c as usize] += weight(dx, dy) / z;
                }
            }
        }
    }
    out
}

/// `n` centroids at least `margin` pixels from every border.
pub fn interior_centroids<R: Rng>(rows: usize, cols: usize, n: usize, margin: usize, rng: &mut R) -> CentroidSet {
    CentroidSet::new(
        (0..n)
            .map(|_| Centroid {
                x: rng.random_range(margin..cols - margin) as u32,
                y: rng.random_range(margin..rows - margin) as u32,
            })
            .collect(),
    )
}

pub fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).abs()).fold(0.0, f64::max)
}
