//! Deep Q-learning: the policy/target network pair, experience replay,
//! Bellman regression and the per-image training loop.

mod adam;
mod checkpoint;
mod explore;
mod fastmath;
mod qnet;
mod replay;
mod trainer;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use explore::{epsilon_at, greedy_action, select_action};
pub use qnet::{stack_states, Architecture, QFunction};
pub use replay::{ReplayBuffer, Transition};
pub use trainer::{train, EpisodeRecord, TrainOutcome, Trainer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::EncoderError;
use crate::env::EnvError;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("state has length {got}, network expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("batch of {states} states with {actions} actions and {targets} targets")]
    BatchMismatch { states: usize, actions: usize, targets: usize },
    #[error("architecture: {0}")]
    Architecture(String),
    #[error(
        "non-finite loss {loss} (max state norm {max_state_norm:.3}, rewards in [{reward_min:.3}, {reward_max:.3}], max |target| {max_abs_target:.3})"
    )]
    NonFiniteLoss { loss: f64, max_state_norm: f64, reward_min: f64, reward_max: f64, max_abs_target: f64 },
    #[error("training needs at least one image")]
    EmptyDataset,
    #[error("invalid training config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which counter indexes the epsilon schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonScope {
    /// Round index within the current image; restarts at every image.
    #[default]
    PerImage,
    /// Episodes completed over the whole run.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub rounds_per_image: usize,
    pub max_steps: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_decrement: f64,
    pub epsilon_floor: f64,
    pub epsilon_decay_rounds: usize,
    pub epsilon_scope: EpsilonScope,
    pub learning_rate: f64,
    pub buffer_capacity: usize,
    pub rng_seed: u64,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rounds_per_image: 15,
            max_steps: 100,
            batch_size: 100,
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_decrement: 0.18,
            epsilon_floor: 0.10,
            epsilon_decay_rounds: 5,
            epsilon_scope: EpsilonScope::PerImage,
            learning_rate: 1e-3,
            buffer_capacity: 10_000,
            rng_seed: 0,
            architecture: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if !(0.0..1.0).contains(&self.gamma) {
            errs.push(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        for (name, v) in [("epsilon_start", self.epsilon_start), ("epsilon_floor", self.epsilon_floor)] {
            if !(0.0..=1.0).contains(&v) {
                errs.push(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.epsilon_decrement >= 0.0 && self.epsilon_decrement <= 1.0) {
            errs.push(format!("epsilon_decrement must lie in [0, 1], got {}", self.epsilon_decrement));
        }
        if self.rounds_per_image == 0 {
            errs.push("rounds_per_image must be positive".into());
        }
        if self.max_steps == 0 {
            errs.push("max_steps must be positive".into());
        }
        if self.batch_size == 0 {
            errs.push("batch_size must be positive".into());
        }
        if self.batch_size > self.buffer_capacity {
            errs.push(format!("batch_size {} exceeds buffer_capacity {}", self.batch_size, self.buffer_capacity));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            errs.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        match self.architecture {
            Architecture::LstmFcn { dense1, dense2, lstm_hidden } if dense1 == 0 || dense2 == 0 || lstm_hidden == 0 => {
                errs.push("architecture widths must be positive".into())
            }
            Architecture::Mlp { hidden: 0 } => errs.push("architecture widths must be positive".into()),
            _ => {}
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// Per-transition regression targets: `r` for terminal transitions,
/// `r + gamma * max_a Q_target(s', a)` otherwise.
pub fn bellman_targets(batch: &[&Transition], target_q: &QFunction, gamma: f64) -> Result<Vec<f64>, AgentError> {
    let live: Vec<&[f32]> = batch.iter().filter_map(|t| t.next_state.as_ref().map(|s| s.as_slice())).collect();
    if let Some(bad) = live.iter().find(|s| s.len() != target_q.input_dim()) {
        return Err(AgentError::Dimension { expected: target_q.input_dim(), got: bad.len() });
    }
    let next_q = if live.is_empty() {
        None
    } else {
        Some(target_q.q_values_batch(&stack_states(live, target_q.input_dim()))?)
    };
    let mut row = 0;
    Ok(batch
        .iter()
        .map(|t| match t.next_state {
            None => t.reward,
            Some(_) => {
                let q = next_q.as_ref().expect("some next state exists");
                let m = q.row(row).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                row += 1;
                t.reward + gamma * m
            }
        })
        .collect())
}

/// One Adam update of `policy` on the batch; returns the pre-update loss.
pub fn optimize_step(
    policy: &mut QFunction,
    opt: &mut Adam,
    batch: &[&Transition],
    targets: &[f64],
) -> Result<f64, AgentError> {
    let dim = policy.input_dim();
    if let Some(bad) = batch.iter().find(|t| t.state.len() != dim) {
        return Err(AgentError::Dimension { expected: dim, got: bad.state.len() });
    }
    let states = stack_states(batch.iter().map(|t| t.state.as_slice()), dim);
    let actions: Vec<usize> = batch.iter().map(|t| t.action.index()).collect();
    let (loss, grad) = policy.loss_and_grad(&states, &actions, targets)?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        let norm = |t: &&Transition| t.state.as_slice().iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        return Err(AgentError::NonFiniteLoss {
            loss,
            max_state_norm: batch.iter().map(norm).fold(0.0, f64::max),
            reward_min: batch.iter().map(|t| t.reward).fold(f64::INFINITY, f64::min),
            reward_max: batch.iter().map(|t| t.reward).fold(f64::NEG_INFINITY, f64::max),
            max_abs_target: targets.iter().map(|v| v.abs()).fold(0.0, f64::max),
        });
    }
    opt.step(policy.params_mut(), &grad);
    Ok(loss)
}

/// Copies the policy parameters into the target network.
pub fn sync_target(policy: &QFunction, target: &mut QFunction) -> Result<(), AgentError> {
    target.copy_from(policy)
}
