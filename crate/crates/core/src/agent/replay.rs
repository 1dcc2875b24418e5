use rand::Rng;
use std::collections::VecDeque;

use crate::encoder::StateVector;
use crate::env::Action;

/// One experience tuple. `next_state` is absent exactly for terminal
/// transitions (the agent selected); step-cap truncations keep theirs.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StateVector,
    pub action: Action,
    pub reward: f64,
    pub next_state: Option<StateVector>,
}

impl Transition {
    pub fn terminal(&self) -> bool {
        self.next_state.is_none()
    }
}

/// FIFO experience memory with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: VecDeque::with_capacity(capacity.min(1 << 16)), pushed: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.pushed += 1;
    }

    /// Stable identity of the transition at position `i`: its push ordinal.
    pub fn serial(&self, i: usize) -> u64 {
        self.pushed - self.items.len() as u64 + i as u64
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `n` distinct transitions chosen uniformly, or `None` while fewer than
    /// `n` are stored.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        Some(self.sample_indices(n, rng)?.into_iter().map(|i| &self.items[i]).collect())
    }

    /// Positions drawn by [`sample`](Self::sample) for the same RNG state.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Vec<usize>> {
        if n == 0 || self.items.len() < n {
            return None;
        }
        Some(rand::seq::index::sample(rng, self.items.len(), n).into_vec())
    }
}
