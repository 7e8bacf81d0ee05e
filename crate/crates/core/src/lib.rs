//! Virtual photographer: extracts views from panoramas, learns per-aspect
//! aesthetic scorers from perturbed copies of good photos, and improves each
//! view one aspect at a time (crop, HDR, saturation, dramatic lighting)
//! before ranking the results on a calibrated four-level scale.

pub mod composition;
pub mod dataset;
pub mod dramatic;
pub mod enhance;
pub mod error;
pub mod filters;
pub mod image;
pub mod learner;
pub mod modelfile;
pub mod nn;
pub mod panorama;
pub mod pipeline;
pub mod scoring;
pub mod synth;

pub use error::{Error, Result};
pub use image::RasterImage;
