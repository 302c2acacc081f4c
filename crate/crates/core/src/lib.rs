//! Object-aware pretraining signals for masked video autoencoders.
//!
//! The pipeline runs detections → [`heatmap`] → [`objectness`] → [`masking`]
//! and [`loss`]. [`synth`] produces long-tailed test videos and [`toymae`]
//! is a small autoencoder that consumes masks and loss weights. [`io`] holds
//! the file formats.

pub mod error;
pub mod heatmap;
pub mod io;
pub mod longtail;
pub mod loss;
pub mod masking;
pub mod objectness;
pub mod par;
pub mod rng;
pub mod synth;
pub mod toymae;
pub mod types;

pub use error::{Error, Result};
pub use heatmap::{PixelHeatmap, SigmaPolicy, Window};
pub use loss::{LossWeights, TokenPatches};
pub use masking::{MaskParams, Strategy};
pub use objectness::{ObjectnessMap, TokenScores};
pub use par::Exec;
pub use types::{BoundingBox, DetectionSet, MaskSpec, PatchGeometry, VideoTensor};
