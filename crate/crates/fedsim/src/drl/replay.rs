//! Replay buffer shared across all servers' agents.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::Rng;

/// One transition: (state, action, reward, next state).
#[derive(Debug, Clone, PartialEq)]
pub struct Experience<S: Scalar> {
    pub state: [S; 4],
    pub action: [S; 6],
    pub reward: S,
    pub next_state: [S; 4],
}

/// Ring buffer of experiences from every agent; oldest evicted first.
#[derive(Debug, Clone)]
pub struct SharedReplayBuffer<S: Scalar> {
    items: Vec<Experience<S>>,
    capacity: usize,
    cursor: usize,
}

impl<S: Scalar> SharedReplayBuffer<S> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            items: Vec::with_capacity(capacity.min(4096)),
            capacity,
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn store(&mut self, exp: Experience<S>) {
        if self.items.len() < self.capacity {
            self.items.push(exp);
        } else {
            self.items[self.cursor] = exp;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// Uniform sample with replacement.
    pub fn sample<'a, R: Rng>(
        &'a self,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<&'a Experience<S>>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..batch)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience<S>> {
        self.items.iter()
    }
}
