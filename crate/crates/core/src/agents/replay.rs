use rand::Rng;

use crate::mdp::Transition;

/// Fixed-capacity ring of transitions; the oldest entry is overwritten once
/// full.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            next: 0,
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

    pub fn push(&mut self, tr: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(tr);
        } else {
            self.items[self.next] = tr;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `k` uniform draws with replacement, appended to `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, k: usize, rng: &mut R, out: &mut Vec<Transition>) {
        if self.items.is_empty() {
            return;
        }
        out.extend((0..k).map(|_| self.items[rng.random_range(0..self.items.len())]));
    }
}
