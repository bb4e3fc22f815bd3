//! Seeded synthetic fluorescence-style images with known cell centroids.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{AnnotatedImage, GrayImage};
use crate::density::{Centroid, CentroidSet};
use crate::error::{Error, Result};

/// Centroids closer than this (Euclidean, pixels) are redrawn.
pub const MIN_SEPARATION: f64 = 2.0;
/// Blobs are evaluated out to this many standard deviations; beyond it the
/// contribution is below half an 8-bit step for amplitudes up to 1.
pub const BLOB_RADIUS_SIGMAS: f64 = 4.0;
const MAX_DRAWS_PER_CELL: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_images: usize,
    pub rows: usize,
    pub cols: usize,
    pub cells_min: usize,
    pub cells_max: usize,
    pub blob_sigma_range: (f64, f64),
    pub amplitude_range: (f64, f64),
    pub noise_sigma: f64,
    pub background_level: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_images: 10,
            rows: 64,
            cols: 64,
            cells_min: 5,
            cells_max: 30,
            blob_sigma_range: (1.5, 2.5),
            amplitude_range: (0.5, 1.0),
            noise_sigma: 0.03,
            background_level: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// 49 images of 512×512 with 202–834 cells (mean 518).
    pub fn paper_scale() -> Self {
        SynthConfig { num_images: 49, rows: 512, cols: 512, cells_min: 202, cells_max: 834, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells_min > self.cells_max {
            return Err(Error::invalid(format!("cells_min {} exceeds cells_max {}", self.cells_min, self.cells_max)));
        }
        if self.rows == 0 || self.cols == 0 || !self.rows.is_multiple_of(8) || !self.cols.is_multiple_of(8) {
            return Err(Error::invalid(format!(
                "image size {}x{} must be positive multiples of 8",
                self.rows, self.cols
            )));
        }
        let (s0, s1) = self.blob_sigma_range;
        if !(s0 > 0.0 && s0 <= s1 && s1.is_finite()) {
            return Err(Error::invalid(format!("blob sigma range ({s0}, {s1}) is invalid")));
        }
        let (a0, a1) = self.amplitude_range;
        if !(a0 >= 0.0 && a0 <= a1 && a1.is_finite()) {
            return Err(Error::invalid(format!("amplitude range ({a0}, {a1}) is invalid")));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid(format!("noise sigma {} is invalid", self.noise_sigma)));
        }
        if !self.background_level.is_finite() {
            return Err(Error::invalid("background level must be finite"));
        }
        Ok(())
    }
}

/// One rendered cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Blob {
    pub centroid: Centroid,
    pub sigma: f64,
    pub amplitude: f64,
}

/// A generated image together with the blobs drawn into it.
#[derive(Clone, Debug)]
pub struct SynthImage {
    pub image: AnnotatedImage,
    pub blobs: Vec<Blob>,
}

pub fn synth_generate(config: &SynthConfig) -> Result<Vec<AnnotatedImage>> {
    Ok(synth_generate_detailed(config)?.into_iter().map(|s| s.image).collect())
}

pub fn synth_generate_detailed(config: &SynthConfig) -> Result<Vec<SynthImage>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let width = (config.num_images.max(1) - 1).to_string().len().max(3);
    (0..config.num_images)
        .map(|i| {
            let id = format!("img_{i:0width$}");
            generate_one(config, id, &mut rng, &noise)
        })
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn generate_one(config: &SynthConfig, id: String, rng: &mut ChaCha8Rng, noise: &Normal<f64>) -> Result<SynthImage> {
    let (rows, cols) = (config.rows, config.cols);
    let n_cells = rng.random_range(config.cells_min..=config.cells_max);

    let mut points: Vec<Centroid> = Vec::with_capacity(n_cells);
    let mut draws = 0;
    while points.len() < n_cells {
        draws += 1;
        if draws > MAX_DRAWS_PER_CELL * n_cells.max(1) {
            return Err(Error::invalid(format!(
                "could not place {n_cells} cells at least {MIN_SEPARATION} px apart in a {rows}x{cols} image"
            )));
        }
        let p = Centroid { x: rng.random_range(0..cols as u32), y: rng.random_range(0..rows as u32) };
        let too_close = points.iter().any(|q| {
            let dx = p.x as f64 - q.x as f64;
            let dy = p.y as f64 - q.y as f64;
            dx * dx + dy * dy < MIN_SEPARATION * MIN_SEPARATION
        });
        if !too_close {
            points.push(p);
        }
    }

    let blobs: Vec<Blob> = points
        .iter()
        .map(|&centroid| Blob {
            centroid,
            sigma: uniform(rng, config.blob_sigma_range),
            amplitude: uniform(rng, config.amplitude_range),
        })
        .collect();

    let mut canvas = vec![config.background_level; rows * cols];
    for b in &blobs {
        add_blob(&mut canvas, rows, cols, b);
    }
    let pixels = canvas
        .into_iter()
        .map(|v| {
            let v = if config.noise_sigma > 0.0 { v + noise.sample(rng) } else { v };
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect();

    Ok(SynthImage {
        image: AnnotatedImage { id, image: GrayImage::new(cols, rows, pixels)?, centroids: CentroidSet::new(points) },
        blobs,
    })
}

/// Adds `amplitude·exp(−d²/2σ²)` within [`BLOB_RADIUS_SIGMAS`]·σ.
fn add_blob(canvas: &mut [f64], rows: usize, cols: usize, b: &Blob) {
    let r = (BLOB_RADIUS_SIGMAS * b.sigma).ceil() as i64;
    let (cx, cy) = (b.centroid.x as i64, b.centroid.y as i64);
    let inv = 1.0 / (2.0 * b.sigma * b.sigma);
    for i in (cy - r).max(0)..=(cy + r).min(rows as i64 - 1) {
        for j in (cx - r).max(0)..=(cx + r).min(cols as i64 - 1) {
            let d2 = ((i - cy) * (i - cy) + (j - cx) * (j - cx)) as f64;
            canvas[i as usize * cols + j as usize] += b.amplitude * (-d2 * inv).exp();
        }
    }
}
