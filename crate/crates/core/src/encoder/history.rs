use serde::{Deserialize, Serialize};

use crate::env::Action;

/// Number of remembered actions (and the length of each one-hot row).
pub const HISTORY_LEN: usize = 9;
pub const HISTORY_DIM: usize = HISTORY_LEN * Action::COUNT;

/// Sliding window of the last nine actions, newest row first.
///
/// Unused rows are all ones; used rows are one-hot over the nine actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryWindow {
    rows: [[f32; Action::COUNT]; HISTORY_LEN],
}

impl Default for HistoryWindow {
    fn default() -> Self {
        Self::new()
    }
}

impl HistoryWindow {
    pub fn new() -> Self {
        Self { rows: [[1.0; Action::COUNT]; HISTORY_LEN] }
    }

    /// Enqueues `action` at the front; the oldest row drops off the end.
    pub fn push(&mut self, action: Action) {
        self.rows.copy_within(0..HISTORY_LEN - 1, 1);
        let mut row = [0.0; Action::COUNT];
        row[action.index()] = 1.0;
        self.rows[0] = row;
    }

    pub fn rows(&self) -> &[[f32; Action::COUNT]; HISTORY_LEN] {
        &self.rows
    }

    pub fn flatten(&self) -> [f32; HISTORY_DIM] {
        let mut out = [0.0; HISTORY_DIM];
        for (chunk, row) in out.chunks_exact_mut(Action::COUNT).zip(&self.rows) {
            chunk.copy_from_slice(row);
        }
        out
    }
}
