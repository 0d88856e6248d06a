//! Synthetic concept micro-world: scenes, rule families and split-reference
//! episodes.

mod dataset;
mod episode;
mod rules;
mod scene;

pub use dataset::{gen_dataset, read_dataset, write_dataset, DatasetSpec, Manifest, MANIFEST_FILE};
pub use episode::{build_episode, consistent_rules, instruction_for, random_rule, recompose, Episode, SupportAnnotation};
pub use rules::{
    descriptors, instruction_colors, is_clear, rule_oracle, Context, Extreme, Family, Level, TaskRule,
    DESCRIPTOR_DIM,
};
pub use scene::{gen_scene, luminance, ColorName, ObjectClass, Scene, SceneObject, SceneSpec, Shape, FEATURE_DIM};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error("could not place objects after repeated attempts")]
    Placement,
    #[error("rule {rule} is not defined on scene {scene}")]
    Inadmissible { rule: &'static str, scene: usize },
    #[error("mosaic order {0} not in {{1, 2, 3}}")]
    MosaicOrder(usize),
    #[error("dataset I/O at {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed dataset file {path}: {message}")]
    Format { path: String, message: String },
}
