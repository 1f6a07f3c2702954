//! Unsupervised image segmentation on globally and locally connected
//! region graphs.
//!
//! The pipeline over-segments an image into superpixel regions, scores local
//! region affinities from co-occurrence statistics of region features,
//! augments the graph with directed global reconstruction coefficients
//! between feature-similar distant regions, partitions the combined operator
//! spectrally, and turns the eigenbasis into a multi-class labeling through
//! histogram priors and hierarchical move-making inference. Boundary maps
//! averaged over a parameter sweep yield segmentations at any scale, which
//! the evaluation module scores against ground truth.
//!
//! Everything numeric is generic over the scalar type (see [`scalar::Real`]);
//! the aliases below pin the two supported precisions.

pub mod config;
pub mod error;
pub mod eval;
pub mod formats;
pub mod global_graph;
pub mod imgproc;
pub mod local_graph;
pub mod maxflow;
pub mod multiclass;
pub mod pipeline;
pub mod regions;
pub mod scalar;
pub mod sparse;
pub mod spectral;

pub use error::{Error, Result};
pub use scalar::Real;

pub type ImagePlane32 = imgproc::ImagePlane<f32>;
pub type ImagePlane64 = imgproc::ImagePlane<f64>;
