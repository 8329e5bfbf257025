//! Synthetic multi-view depth corpus and the input preprocessing pipeline.
//!
//! Real recordings would enter through [`Corpus`]: a loader that fills the
//! stacked arrays and the manifest can reuse everything downstream.

mod corpus;
mod preprocess;
mod render;
mod skeleton;

pub use corpus::{
    build_corpus, sha256_hex, Cameras, Corpus, CubeConfig, CubeLayout, DataConfig, FileEntry, Manifest, PoseSampling, Record,
    Rig, Split, Splits, Units, WriteSummary, MANIFEST_FILE, MANIFEST_VERSION,
};
pub use preprocess::{crop_box, normalize_depth, preprocess, resize_bilinear, CropMode, PreprocessConfig};
pub use render::{
    add_noise, body_capsules, ray_capsule, render_view, trace_pixel, Capsule, DepthFrame, NoiseConfig, Scene, View,
};
pub use skeleton::{axis_angle, euler, PoseMode, SkeletonKind, SkeletonSpec, EXCURSION_SHIFT_MM, EXCURSION_TILT};
