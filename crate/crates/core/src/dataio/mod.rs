//! File formats, dataset directories and the synthetic image generator.
//!
//! A dataset directory holds `images/<id>.pgm`, `annotations/<id>.csv` and,
//! once rendered, `density/<id>.dmap`.

mod centroids;
mod checkpoint;
mod dmap;
mod pgm;
mod synth;

use std::io;
use std::path::{Path, PathBuf};

pub use centroids::{decode_centroids, encode_centroids, read_centroids, write_centroids};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, expected_tensors, load_checkpoint, save_checkpoint, Checkpoint,
};
pub use dmap::{decode_dmap, encode_dmap, read_dmap, write_dmap};
pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm, GrayImage};
pub use synth::{
    synth_generate, synth_generate_detailed, Blob, SynthConfig, SynthImage, BLOB_RADIUS_SIGMAS, MIN_SEPARATION,
};

use crate::density::CentroidSet;
use crate::error::Result;
use crate::tensor::Tensor;

pub const IMAGES_DIR: &str = "images";
pub const ANNOTATIONS_DIR: &str = "annotations";
pub const DENSITY_DIR: &str = "density";

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedImage {
    pub id: String,
    pub image: GrayImage,
    pub centroids: CentroidSet,
}

impl AnnotatedImage {
    pub fn rows(&self) -> usize {
        self.image.height
    }

    pub fn cols(&self) -> usize {
        self.image.width
    }

    /// The image as a `(1, 1, rows, cols)` tensor scaled to [0, 1].
    pub fn input_tensor(&self) -> Tensor {
        image_tensor(&self.image)
    }
}

pub fn image_tensor(image: &GrayImage) -> Tensor {
    let data = image.pixels.iter().map(|&p| p as f32 / 255.0).collect();
    Tensor::from_vec([1, 1, image.height, image.width], data).expect("pixel count matches dims")
}

pub fn image_path(root: &Path, id: &str) -> PathBuf {
    root.join(IMAGES_DIR).join(format!("{id}.pgm"))
}

pub fn annotation_path(root: &Path, id: &str) -> PathBuf {
    root.join(ANNOTATIONS_DIR).join(format!("{id}.csv"))
}

pub fn density_path(root: &Path, id: &str) -> PathBuf {
    root.join(DENSITY_DIR).join(format!("{id}.dmap"))
}

pub fn write_dataset(root: &Path, images: &[AnnotatedImage]) -> Result<()> {
    std::fs::create_dir_all(root.join(IMAGES_DIR))?;
    std::fs::create_dir_all(root.join(ANNOTATIONS_DIR))?;
    for img in images {
        write_pgm(image_path(root, &img.id), &img.image)?;
        write_centroids(annotation_path(root, &img.id), &img.centroids)?;
    }
    Ok(())
}

/// Ids of all `images/*.pgm` files, sorted.
pub fn dataset_ids(root: &Path) -> Result<Vec<String>> {
    let dir = root.join(IMAGES_DIR);
    let mut ids = Vec::new();
    for entry in
        std::fs::read_dir(&dir).map_err(|e| io::Error::new(e.kind(), format!("cannot read {}: {e}", dir.display())))?
    {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "pgm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Loads every image with its annotation, sorted by id. A missing
/// annotation file is an I/O error naming the image id.
pub fn load_dataset(root: &Path) -> Result<Vec<AnnotatedImage>> {
    dataset_ids(root)?.into_iter().map(|id| load_annotated(root, &id)).collect()
}

pub fn load_annotated(root: &Path, id: &str) -> Result<AnnotatedImage> {
    let image = read_pgm(image_path(root, id))?;
    let ann = annotation_path(root, id);
    if !ann.is_file() {
        return Err(io::Error::new(
            io::ErrorKind::NotFound,
            format!("missing annotation for `{id}` (expected {})", ann.display()),
        )
        .into());
    }
    let centroids = read_centroids(&ann)?;
    Ok(AnnotatedImage { id: id.to_string(), image, centroids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::Centroid;
    use crate::Error;

    fn sample() -> Vec<AnnotatedImage> {
        synth_generate(&SynthConfig { num_images: 3, seed: 2, ..Default::default() }).unwrap()
    }

    #[test]
    fn dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = sample();
        write_dataset(dir.path(), &imgs).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), imgs);
        assert_eq!(dataset_ids(dir.path()).unwrap(), vec!["img_000", "img_001", "img_002"]);
    }

    #[test]
    fn missing_annotation_names_the_id() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &sample()).unwrap();
        std::fs::remove_file(annotation_path(dir.path(), "img_001")).unwrap();
        match load_dataset(dir.path()).unwrap_err() {
            Error::Io(e) => {
                assert_eq!(e.kind(), io::ErrorKind::NotFound);
                assert!(e.to_string().contains("img_001"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn input_tensor_is_normalized() {
        let img = AnnotatedImage {
            id: "a".into(),
            image: GrayImage::new(2, 1, vec![0, 255]).unwrap(),
            centroids: CentroidSet::new(vec![Centroid { x: 1, y: 0 }]),
        };
        let t = img.input_tensor();
        assert_eq!(t.dims(), [1, 1, 1, 2]);
        assert_eq!(t.data(), &[0.0, 1.0]);
    }
}
