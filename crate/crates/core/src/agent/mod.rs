//! Recurrent navigation policy, its trainer, and logged rollouts.

mod explorer;
mod gru;
mod matrix;
mod rollout;
mod task;
mod train;

pub use explorer::{explorer_actions, ExplorerConfig};
pub use gru::{
    argmax, gru_forward, gru_step, gru_step_backward, policy_logits, sigmoid, GruParams, GruShape, ParamsFile,
    StepCache, TensorEntry, TENSOR_NAMES,
};
pub use matrix::{dot, Matrix};
pub use rollout::{read_jsonl, rollout_forced, rollout_policy, write_jsonl, EpisodeOutcome, RecordLine, TimestepRecord};
pub use task::{encode_input, expert_actions, gps_triple, is_success, Expert, Intervention, TaskMode, TaskSpec, WorldConfig};
pub use train::{
    action_accuracy, bc_train, expert_distance, grad_check, grad_check_with, loss_and_grad, model_shape,
    sample_tasks, train_on, Adam, GoalInput, Sequence, TaskSampler, TrainConfig, TrainOutput,
};
