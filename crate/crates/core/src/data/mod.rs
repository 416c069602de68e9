//! Scenes, synthetic data, dataset parsers, augmentation and splitting.

mod annotations;
mod augment;
mod manifest;
mod scene;
mod split;
pub mod synth;

pub use annotations::{
    parse_cornell, parse_cornell_str, parse_jacquard, parse_jacquard_str, rect_from_vertices, Parsed,
};
pub use augment::{augment, AugmentConfig, Transform};
pub use manifest::{load_image, read_manifest, save_image, write_dataset, Record};
pub use scene::Scene;
pub use split::{fold_indices, object_wise_split};
pub use synth::{generate_dataset, generate_scene, ShapeKind, SynthConfig};
