//! Training-free spatio-temporal layout control for text-to-video attention.
//!
//! Bounding-box trajectories are rasterized to per-frame latent masks, turned
//! into cross, spatial and temporal attention masks, and applied to a masked
//! attention kernel during the first steps of a denoising loop. The crate also
//! generates the interactive-motion prompt/trajectory dataset and computes
//! the localization metrics used to evaluate it.

pub mod ablation;
pub mod attention;
pub mod codec;
pub mod error;
pub mod geometry;
pub mod imc;
pub mod maskgen;
pub mod metrics;
pub mod pipeline;
pub mod trajfile;

pub use attention::{masked_attention, to_additive, AttentionInputs, AttentionOutput, ScaleMode, NEG};
pub use error::{Error, Result};
pub use geometry::{rasterize, BBox, BBoxTrajectory, Canvas, FrameMaskSet, LatentGrid};
pub use maskgen::{build_bundle, AblationFlags, AttentionMaskBundle, BinaryMatrix, MaskFamily, TokenLabels};
pub use pipeline::{run, GenerationMode, LatentVideo, PipelineConfig, PromptSpec, RunOutput, RunReport};
pub use trajfile::TrajectoryFile;
