//! Sliding window of the most recent clips.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::rl::rollout::ClipRollout;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutBuffer {
    capacity: usize,
    clips: VecDeque<ClipRollout>,
}

impl RolloutBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            capacity,
            clips: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Appends a clip, evicting and returning the oldest one when full.
    pub fn push(&mut self, clip: ClipRollout) -> Option<ClipRollout> {
        let evicted = if self.clips.len() == self.capacity {
            self.clips.pop_front()
        } else {
            None
        };
        self.clips.push_back(clip);
        evicted
    }

    pub fn clips(&self) -> impl Iterator<Item = &ClipRollout> {
        self.clips.iter()
    }

    pub fn num_transitions(&self) -> usize {
        self.clips.iter().map(|c| c.transitions.len()).sum()
    }
}
