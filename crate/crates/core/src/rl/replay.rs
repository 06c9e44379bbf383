//! Bounded experience memory.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::RlError;
use crate::features::FEATURE_DIM;
use crate::SimRng;

/// Width of an encoded action: five one-hot decision slots and the offer.
pub const ACTION_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state: [f64; FEATURE_DIM],
    pub action: [f64; ACTION_DIM],
    pub reward: f64,
    pub next_state: [f64; FEATURE_DIM],
    pub terminal: bool,
}

/// Ring buffer of capacity `capacity` sampled in batches of `batch_size`.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    batch_size: usize,
    items: Vec<Experience>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, batch_size: usize) -> Result<Self, RlError> {
        if batch_size == 0 || batch_size >= capacity {
            return Err(RlError::InvalidConfig(format!(
                "batch size {batch_size} must satisfy 0 < K < N = {capacity}"
            )));
        }
        Ok(Self {
            capacity,
            batch_size,
            items: Vec::new(),
            next: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Stores `e`, overwriting the oldest entry once full.
    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Draws `batch_size` distinct entries, or `None` until that many exist.
    pub fn sample(&self, rng: &mut SimRng) -> Option<Vec<&Experience>> {
        if self.items.len() < self.batch_size {
            return None;
        }
        Some(
            index::sample(rng, self.items.len(), self.batch_size)
                .into_iter()
                .map(|i| &self.items[i])
                .collect(),
        )
    }
}
