//! The toy reasoning policy over structured responses and its two-stage
//! trainer.

mod grpo;
mod model;
mod sampling;
mod trainer;

pub use grpo::{group_advantages, k3, kl_penalty, ADVANTAGE_EPS, DEGENERATE_STD};
pub use model::{
    answer_index, answer_logits, answer_phrases, check_logits, coordinate_tokens, frozen, hidden_states, init_policy,
    object_rows, target_logits, EpisodeView, PolicyConfig, PolicyVars, COORD_TOKENS, TAG_COUNT,
};
pub use sampling::{
    categorical_log_prob, choice_log_prob, greedy_choices, log_prob, oracle_choices, render, sample_group,
    sample_trajectory, tags_log_prob, Choices, GroupBatch, Trajectory,
};
pub use trainer::{
    box_alignment, decode_box, decode_logits, decode_mask, direct_logits, direct_mask, seg_loss_for, stage1_step, stage2_step, train_stage1, train_stage2, views,
    Model, SegTerm, Stage1Record, Stage2Record, TrainConfig,
};

use crate::geometry::GeometryError;
use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("episode {0} has fewer than two query candidates")]
    Candidates(usize),
    #[error("group size must be at least 2, got {0}")]
    GroupSize(usize),
    #[error("invalid choice: {0}")]
    Choice(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: String, step: usize },
}
