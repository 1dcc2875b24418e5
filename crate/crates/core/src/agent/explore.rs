use rand::Rng;

use super::TrainConfig;
use crate::env::Action;

/// Exploration rate for a 0-based round index.
pub fn epsilon_at(round: usize, cfg: &TrainConfig) -> f64 {
    let e = cfg.epsilon_start - cfg.epsilon_decrement * round.min(cfg.epsilon_decay_rounds) as f64;
    // 1 - 0.18 * 5 lands a rounding error above 0.1.
    if e - cfg.epsilon_floor < 1e-9 {
        cfg.epsilon_floor
    } else {
        e
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn greedy_action(q: &[f64; Action::COUNT]) -> Action {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    Action::from_index(best).expect("index below COUNT")
}

/// Epsilon-greedy choice: uniform over all nine actions with probability
/// `epsilon`, greedy otherwise.
pub fn select_action<R: Rng + ?Sized>(q: &[f64; Action::COUNT], epsilon: f64, rng: &mut R) -> Action {
    if rng.random::<f64>() < epsilon {
        Action::from_index(rng.random_range(0..Action::COUNT)).expect("index below COUNT")
    } else {
        greedy_action(q)
    }
}
