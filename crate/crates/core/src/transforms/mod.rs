//! Temporal index generation and clip-wise spatial augmentation.

pub mod spatial;
pub mod temporal;

pub use spatial::{
    center_intensity, center_view, rotate90, spatial_augment, AugmentedClip, CropRect,
    SpatialAugConfig,
};
pub use temporal::{
    format_transform_list, index_sequence, jitter_factor, parse_transform_list, required_span,
    sample_offsets, ClipSpec, TemporalTransform, TransformKind, DEFAULT_BASE_INTERVAL,
    DEFAULT_CLIP_LEN, JITTER_RANGE,
};
