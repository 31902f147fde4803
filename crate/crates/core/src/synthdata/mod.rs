//! Sprite videos with ground-truth intrinsic speed and motion category.

pub mod generate;
pub mod io;

pub use generate::{
    generate_dataset, generate_video, plan_video, render, Dataset, FrameVolume, GeneratorParams,
    MotionCategory, Sprite, SyntheticVideo, VideoPlan,
};
pub use io::{
    decode_video, encode_video, read_dataset, read_split, read_video, write_dataset, write_split,
    write_video, Manifest, ManifestRecord, Split,
};
