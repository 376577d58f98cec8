//! Patch sampling, the patch encoder, and multiple-instance bag classification.

pub mod encoder;
pub mod mil;
pub mod patch;

pub use encoder::{Conv2d, EncoderConfig, PatchEncoder};
pub use mil::{
    aggregate_bag, train_vision, Aggregation, Sampler, TrainedVision, VisionExample, VisionModel,
    VisionTrainConfig,
};
pub use patch::{
    extract_patch, sample_crop_boxes, sample_random_patches, squarify, squarify_proposals, Patch,
    DEFAULT_SIDE_RANGE,
};
