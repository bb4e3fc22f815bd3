//! Ground-truth density maps, block-summed low-resolution targets and
//! counting by integration.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_SIGMA: f64 = 3.0;
/// Kernel size 21.
pub const DEFAULT_HALF_WIDTH: usize = 10;

/// Normalised, truncated isotropic Gaussian of size `2·half_width + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
    half_width: usize,
    values: Vec<f64>,
    normalizer: f64,
}

impl GaussianKernel {
    pub fn new(sigma: f64, half_width: usize) -> Result<Self> {
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::invalid(format!("kernel sigma must be positive, got {sigma}")));
        }
        if half_width < 1 {
            return Err(Error::invalid("kernel half width must be at least 1"));
        }
        let k = half_width as i64;
        let size = 2 * half_width + 1;
        let mut values = Vec::with_capacity(size * size);
        for ny in -k..=k {
            for nx in -k..=k {
                values.push((-((nx * nx + ny * ny) as f64) / (2.0 * sigma * sigma)).exp());
            }
        }
        let total: f64 = values.iter().sum();
        let normalizer = 1.0 / total;
        for v in &mut values {
            *v *= normalizer;
        }
        Ok(GaussianKernel { sigma, half_width, values, normalizer })
    }

    /// Builds a kernel from an odd side length, e.g. 21.
    pub fn with_size(sigma: f64, size: usize) -> Result<Self> {
        if size < 3 || size.is_multiple_of(2) {
            return Err(Error::invalid(format!("kernel size must be odd and at least 3, got {size}")));
        }
        Self::new(sigma, size / 2)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn size(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Kernel value at offset `(nx, ny)`; zero outside the support.
    pub fn at(&self, nx: i64, ny: i64) -> f64 {
        let k = self.half_width as i64;
        if nx.abs() > k || ny.abs() > k {
            return 0.0;
        }
        self.values[((ny + k) as usize) * self.size() + (nx + k) as usize]
    }
}

/// A cell centroid: `x` is the column, `y` the row, both zero-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Centroid {
    pub x: u32,
    pub y: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CentroidSet {
    pub points: Vec<Centroid>,
}

impl CentroidSet {
    pub fn new(points: Vec<Centroid>) -> Self {
        CentroidSet { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn check_bounds(&self, rows: usize, cols: usize) -> Result<()> {
        match self.points.iter().find(|p| p.x as usize >= cols || p.y as usize >= rows) {
            Some(p) => Err(Error::invalid(format!("centroid ({}, {}) lies outside a {rows}x{cols} image", p.x, p.y))),
            None => Ok(()),
        }
    }
}

/// Single-channel map whose integral is a cell count.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMap {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl DensityMap {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DensityMap { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::invalid(format!(
                "density map of {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(DensityMap { rows, cols, values })
    }

    /// Takes plane `(b, 0)` of a single-channel tensor.
    pub fn from_tensor(t: &Tensor, b: usize) -> Result<Self> {
        if t.channels() != 1 || b >= t.batch() {
            return Err(Error::invalid(format!("cannot take density map {b} from tensor of dims {:?}", t.dims())));
        }
        Self::from_vec(t.rows(), t.cols(), t.plane(b, 0).to_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec([1, 1, self.rows, self.cols], self.values.clone()).expect("dims match by construction")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.cols + j]
    }
}

pub fn gaussian_kernel(sigma: f64, half_width: usize) -> Result<GaussianKernel> {
    GaussianKernel::new(sigma, half_width)
}

/// Superposes one kernel per centroid. Kernel mass that falls outside the
/// image is dropped, not renormalised, so cells near the border contribute
/// less than one.
pub fn render_density_map(
    rows: usize,
    cols: usize,
    centroids: &CentroidSet,
    kernel: &GaussianKernel,
) -> Result<DensityMap> {
    centroids.check_bounds(rows, cols)?;
    let k = kernel.half_width() as i64;
    let mut acc = vec![0.0f64; rows * cols];
    for p in &centroids.points {
        let (cx, cy) = (p.x as i64, p.y as i64);
        let i_lo = (cy - k).max(0);
        let i_hi = (cy + k).min(rows as i64 - 1);
        let j_lo = (cx - k).max(0);
        let j_hi = (cx + k).min(cols as i64 - 1);
        for i in i_lo..=i_hi {
            let row = &mut acc[i as usize * cols..(i as usize + 1) * cols];
            for j in j_lo..=j_hi {
                row[j as usize] += kernel.at(j - cx, i - cy);
            }
        }
    }
    DensityMap::from_vec(rows, cols, acc.into_iter().map(|v| v as f32).collect())
}

/// Sums non-overlapping `a × b` blocks (`a` rows, `b` columns).
pub fn downsample_block_sum(map: &DensityMap, factors: (usize, usize)) -> Result<DensityMap> {
    let (a, b) = factors;
    if a == 0 || b == 0 || !map.rows.is_multiple_of(a) || !map.cols.is_multiple_of(b) {
        return Err(Error::invalid(format!(
            "cannot block-sum a {}x{} map with factors ({a}, {b})",
            map.rows, map.cols
        )));
    }
    let (oh, ow) = (map.rows / a, map.cols / b);
    let mut acc = vec![0.0f64; oh * ow];
    for i in 0..map.rows {
        let row = &map.values[i * map.cols..(i + 1) * map.cols];
        let dst = &mut acc[(i / a) * ow..(i / a + 1) * ow];
        for (j, &v) in row.iter().enumerate() {
            dst[j / b] += v as f64;
        }
    }
    DensityMap::from_vec(oh, ow, acc.into_iter().map(|v| v as f32).collect())
}

/// Integral of the map, accumulated in `f64`.
pub fn count_from_density(map: &DensityMap) -> f64 {
    map.values.iter().map(|&v| v as f64).sum()
}
