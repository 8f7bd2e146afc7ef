use ndarray::{Array1, Array2};
use rand::Rng;

use super::{Action, Experience};
use crate::sensing::OBS_DIM;

/// Fixed-capacity ring of experiences; once full, each insertion evicts the oldest.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Experience>,
    cursor: usize,
    inserted: u64,
}

/// A minibatch laid out for batched network passes.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub observations: Array2<f64>,
    pub actions: Vec<Action>,
    pub rewards: Array1<f64>,
    pub next_observations: Array2<f64>,
    pub terminals: Vec<bool>,
}

impl Batch {
    pub fn from_experiences<'a>(items: impl ExactSizeIterator<Item = &'a Experience>) -> Self {
        let n = items.len();
        let mut observations = Array2::zeros((n, OBS_DIM));
        let mut next_observations = Array2::zeros((n, OBS_DIM));
        let mut actions = Vec::with_capacity(n);
        let mut rewards = Array1::zeros(n);
        let mut terminals = Vec::with_capacity(n);
        for (i, e) in items.enumerate() {
            observations
                .row_mut(i)
                .iter_mut()
                .zip(&e.observation)
                .for_each(|(d, s)| *d = *s);
            next_observations
                .row_mut(i)
                .iter_mut()
                .zip(&e.next_observation)
                .for_each(|(d, s)| *d = *s);
            actions.push(e.action);
            rewards[i] = e.reward;
            terminals.push(e.terminal);
        }
        Self {
            observations,
            actions,
            rewards,
            next_observations,
            terminals,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            storage: Vec::new(),
            cursor: 0,
            inserted: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Total insertions since creation, including evicted ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, experience: Experience) {
        if self.storage.len() < self.capacity {
            self.storage.push(experience);
        } else {
            self.storage[self.cursor] = experience;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        self.inserted += 1;
    }

    pub fn is_ready(&self, batch_size: usize) -> bool {
        batch_size > 0 && self.storage.len() >= batch_size
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.storage.iter()
    }

    /// Uniform indices with replacement, or `None` while fewer than
    /// `batch_size` experiences are stored.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Option<Vec<usize>> {
        if !self.is_ready(batch_size) {
            return None;
        }
        Some((0..batch_size).map(|_| rng.random_range(0..self.storage.len())).collect())
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Option<Batch> {
        let idx = self.sample_indices(batch_size, rng)?;
        Some(Batch::from_experiences(idx.iter().map(|&i| &self.storage[i])))
    }
}
