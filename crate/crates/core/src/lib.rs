//! Text-supervised visual hashtag discovery for infographics.
//!
//! The pipeline has two stages. A text model predicts a category and a set of
//! topic tags from the words transcribed out of an image. A patch-based
//! multiple-instance vision model, trained on the same labels, is then run
//! densely over the image for each predicted tag; the resulting activation
//! heatmap is thresholded and split into connected regions, and the best
//! region becomes the tag's "visual hashtag".
//!
//! Module map:
//!
//! - [`corpus`]: manifests, tag merging, curation and train/test splits.
//! - [`synthgen`]: synthetic infographics with planted icon glyphs.
//! - [`text`]: transcript cleaning, mean word embeddings, snap and vote baselines.
//! - [`mlp`]: the single-hidden-layer network, SGD training, top-k prediction.
//! - [`checkpoint`]: the JSON checkpoint envelope shared by text and vision models.
//! - [`vision`]: patch sampling, the patch encoder and MIL bag classification.
//! - [`hashtag`]: crop scoring, heatmaps, components, refinement and extraction.
//! - [`eval`]: IOU, top-k accuracy, tag precision/recall, localization metrics.
//! - [`gradcheck`]: finite-difference gradient checks for both networks.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod geom;
pub mod gradcheck;
pub mod hashtag;
pub mod mlp;
pub mod seed;
pub mod synthgen;
pub mod text;
pub mod vision;

pub use error::{Error, Result};
pub use geom::PixelBox;
