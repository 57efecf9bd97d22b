use std::collections::VecDeque;

use rand::seq::index;

use super::Transition;
use crate::rng::Rng;

/// Bounded FIFO store of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
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

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Transition>) {
        for t in ts {
            self.push(t);
        }
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &Transition> {
        self.items.iter()
    }

    /// Draws `min(n, len)` distinct transitions uniformly.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<&Transition> {
        let n = n.min(self.items.len());
        index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}
