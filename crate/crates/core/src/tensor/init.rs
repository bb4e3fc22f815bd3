use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{ConvFilter, Tensor};
use crate::error::{Error, Result};

/// Orthogonal initialisation of a `(out, in, k, k)` filter bank.
///
/// The weights are viewed as an `out × (in·k·k)` matrix, filled with unit
/// normals and replaced by the `Q` factor of its QR decomposition (taken on
/// the transpose when the matrix is wide), with column signs fixed so that
/// `diag(R) ≥ 0`. Rows or columns, whichever are fewer, end up orthonormal
/// and are then multiplied by `gain`. Biases start at zero.
pub fn orthogonal_init<R: Rng + ?Sized>(shape: [usize; 4], gain: f32, rng: &mut R) -> Result<ConvFilter> {
    if shape.contains(&0) {
        return Err(Error::invalid(format!("orthogonal_init: shape {shape:?} has a zero dimension")));
    }
    let rows = shape[0];
    let cols = shape[1] * shape[2] * shape[3];
    let tall = rows >= cols;
    let (m, n) = if tall { (rows, cols) } else { (cols, rows) };

    let samples: Vec<f64> = (0..m * n).map(|_| rng.sample(StandardNormal)).collect();
    // Row-major fill of an m × n matrix.
    let a = DMatrix::from_row_slice(m, n, &samples);
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }

    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let v = if tall { q[(i, j)] } else { q[(j, i)] };
            data.push((v * gain as f64) as f32);
        }
    }
    ConvFilter::new(Tensor::from_vec(shape, data)?, vec![0.0; shape[0]])
}
