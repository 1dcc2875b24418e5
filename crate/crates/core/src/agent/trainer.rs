use rand::SeedableRng;
use std::collections::HashMap;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    epsilon_at, optimize_step, select_action, stack_states, sync_target, Adam, AgentError, Checkpoint, EpsilonScope,
    QFunction, ReplayBuffer, TrainConfig, Transition, CHECKPOINT_VERSION,
};
use crate::dataset::AnnotatedImage;
use crate::encoder::{encode_state, ExtractorSpec, FeatureExtractor, HISTORY_DIM};
use crate::env::{Episode, EpisodeEnd, RewardParams};

/// Stream tag separating exploration randomness from weight initialization.
const ROLLOUT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub image_index: usize,
    pub image: String,
    pub round: usize,
    pub epsilon: f64,
    pub steps: usize,
    pub end: EpisodeEnd,
    pub final_iou: f64,
    pub total_reward: f64,
    /// Pre-update loss of every optimization step in the episode.
    pub losses: Vec<f64>,
}

impl EpisodeRecord {
    pub fn mean_loss(&self) -> Option<f64> {
        (!self.losses.is_empty()).then(|| self.losses.iter().sum::<f64>() / self.losses.len() as f64)
    }
}

/// Mutable training state; one image at a time.
pub struct Trainer<'f> {
    cfg: TrainConfig,
    reward: RewardParams,
    fe: &'f dyn FeatureExtractor,
    policy: QFunction,
    target: QFunction,
    opt: Adam,
    buffer: ReplayBuffer,
    /// `max_a Q_target(s', a)` by transition serial; the target network only
    /// changes at sync, so entries stay valid until then.
    next_max: HashMap<u64, f64>,
    images_completed: usize,
    episodes_completed: usize,
}

impl<'f> Trainer<'f> {
    pub fn new(cfg: TrainConfig, reward: RewardParams, fe: &'f dyn FeatureExtractor) -> Result<Self, AgentError> {
        cfg.validate().map_err(AgentError::InvalidConfig)?;
        reward.validate().map_err(AgentError::InvalidConfig)?;
        let input_dim = fe.output_dim() + HISTORY_DIM;
        let policy = QFunction::new_seeded(cfg.architecture, input_dim, cfg.rng_seed)?;
        let target = policy.clone();
        let opt = Adam::new(policy.num_params(), cfg.learning_rate);
        let buffer = ReplayBuffer::new(cfg.buffer_capacity);
        Ok(Self {
            cfg,
            reward,
            fe,
            policy,
            target,
            opt,
            buffer,
            next_max: HashMap::new(),
            images_completed: 0,
            episodes_completed: 0,
        })
    }

    /// Restores networks, optimizer and counters. The replay buffer starts
    /// empty.
    pub fn from_checkpoint(ck: &Checkpoint, fe: &'f dyn FeatureExtractor) -> Result<Self, AgentError> {
        if fe.output_dim() + HISTORY_DIM != ck.input_dim {
            return Err(AgentError::Dimension { expected: ck.input_dim, got: fe.output_dim() + HISTORY_DIM });
        }
        Ok(Self {
            cfg: ck.train.clone(),
            reward: ck.reward,
            fe,
            policy: ck.policy()?,
            target: ck.target()?,
            opt: ck.optimizer.clone(),
            buffer: ReplayBuffer::new(ck.train.buffer_capacity),
            next_max: HashMap::new(),
            images_completed: ck.images_completed,
            episodes_completed: ck.episodes_completed,
        })
    }

    pub fn checkpoint(&self, extractor: &ExtractorSpec) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            architecture: self.policy.architecture(),
            input_dim: self.policy.input_dim(),
            params: self.policy.params().to_vec(),
            target_params: self.target.params().to_vec(),
            optimizer: self.opt.clone(),
            extractor: extractor.clone(),
            extractor_id: self.fe.id(),
            reward: self.reward,
            train: self.cfg.clone(),
            rng_seed: self.cfg.rng_seed,
            images_completed: self.images_completed,
            episodes_completed: self.episodes_completed,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn policy(&self) -> &QFunction {
        &self.policy
    }

    pub fn target(&self) -> &QFunction {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn images_completed(&self) -> usize {
        self.images_completed
    }

    pub fn into_policy(self) -> QFunction {
        self.policy
    }

    /// Randomness for image `index`; independent of everything before it so
    /// a resumed run draws the same exploration noise.
    fn rollout_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.rng_seed ^ ROLLOUT_SALT);
        rng.set_stream(index as u64);
        rng
    }

    /// Runs every round on one image, then syncs the target network.
    pub fn train_image(&mut self, index: usize, img: &AnnotatedImage) -> Result<Vec<EpisodeRecord>, AgentError> {
        let mut rng = self.rollout_rng(index);
        let mut records = Vec::with_capacity(self.cfg.rounds_per_image);
        for round in 0..self.cfg.rounds_per_image {
            let sched = match self.cfg.epsilon_scope {
                EpsilonScope::PerImage => round,
                EpsilonScope::Global => self.episodes_completed,
            };
            let eps = epsilon_at(sched, &self.cfg);
            records.push(self.run_episode(index, img, round, eps, &mut rng)?);
            self.episodes_completed += 1;
        }
        sync_target(&self.policy, &mut self.target)?;
        self.next_max.clear();
        self.images_completed = index + 1;
        Ok(records)
    }

    /// Bellman targets for buffer positions `idx`, evaluating the target
    /// network only on next states it has not seen since the last sync.
    fn targets_for(&mut self, idx: &[usize]) -> Result<Vec<f64>, AgentError> {
        let buf = &self.buffer;
        let missing: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&i| !buf.get(i).expect("sampled").terminal() && !self.next_max.contains_key(&buf.serial(i)))
            .collect();
        if !missing.is_empty() {
            let dim = self.target.input_dim();
            let states = missing.iter().map(|&i| buf.get(i).and_then(|t| t.next_state.as_ref()).expect("live").as_slice());
            let q = self.target.q_values_batch(&stack_states(states, dim))?;
            for (row, &i) in q.rows().into_iter().zip(&missing) {
                self.next_max.insert(buf.serial(i), row.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            }
        }
        Ok(idx
            .iter()
            .map(|&i| {
                let t = buf.get(i).expect("sampled");
                match t.next_state {
                    None => t.reward,
                    Some(_) => t.reward + self.cfg.gamma * self.next_max[&buf.serial(i)],
                }
            })
            .collect())
    }

    fn run_episode(
        &mut self,
        index: usize,
        img: &AnnotatedImage,
        round: usize,
        eps: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<EpisodeRecord, AgentError> {
        let mut ep = Episode::reset(img, self.cfg.max_steps)?;
        ep.best_iou()?;
        let mut state = encode_state(self.fe, &img.pixels, &ep.frame(), ep.history())?;
        let mut total_reward = 0.0;
        let mut losses = Vec::new();
        loop {
            let q = self.policy.q_values(state.as_slice())?;
            let action = select_action(&q, eps, rng);
            let out = ep.step(action, &self.reward)?;
            total_reward += out.reward;
            let next = if out.terminal() {
                None
            } else {
                Some(encode_state(self.fe, &img.pixels, &ep.frame(), ep.history())?)
            };
            self.buffer.push(Transition { state, action, reward: out.reward, next_state: next.clone() });
            if let Some(idx) = self.buffer.sample_indices(self.cfg.batch_size, rng) {
                let targets = self.targets_for(&idx)?;
                let batch: Vec<&Transition> = idx.iter().map(|&i| self.buffer.get(i).expect("sampled")).collect();
                losses.push(optimize_step(&mut self.policy, &mut self.opt, &batch, &targets)?);
            }
            match (out.end, next) {
                (Some(end), _) => {
                    return Ok(EpisodeRecord {
                        image_index: index,
                        image: img.name.clone(),
                        round,
                        epsilon: eps,
                        steps: ep.t(),
                        end,
                        final_iou: ep.best_iou()?.0,
                        total_reward,
                        losses,
                    })
                }
                (None, Some(s)) => state = s,
                (None, None) => unreachable!("non-terminal steps carry a next state"),
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: QFunction,
    pub log: Vec<EpisodeRecord>,
}

/// Trains over `dataset` in order. `after_image` runs once per image with the
/// trainer (for checkpointing) and that image's records.
pub fn train<F>(
    dataset: &[AnnotatedImage],
    cfg: &TrainConfig,
    reward: &RewardParams,
    fe: &dyn FeatureExtractor,
    mut after_image: F,
) -> Result<TrainOutcome, AgentError>
where
    F: FnMut(&Trainer<'_>, &[EpisodeRecord]) -> Result<(), AgentError>,
{
    if dataset.is_empty() {
        return Err(AgentError::EmptyDataset);
    }
    let mut trainer = Trainer::new(cfg.clone(), *reward, fe)?;
    let mut log = Vec::new();
    for (i, img) in dataset.iter().enumerate() {
        let recs = trainer.train_image(i, img)?;
        after_image(&trainer, &recs)?;
        log.extend(recs);
    }
    Ok(TrainOutcome { policy: trainer.into_policy(), log })
}
