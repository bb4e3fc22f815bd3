//! Deeply-supervised density regression for counting cells in microscopy
//! images.
//!
//! The crate covers the whole pipeline: Gaussian ground-truth density maps,
//! a small from-scratch tensor engine with exact backward passes, the
//! skip-connected counting network with its auxiliary supervision heads,
//! SGD training with k-fold cross validation, and the on-disk formats.

pub mod dataio;
pub mod density;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod tensor;
pub mod training;

pub use error::{Error, FormatError, Result};
