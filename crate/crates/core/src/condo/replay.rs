//! Reservoir replay buffer over training items.
//!
//! Under a finite capacity the buffer keeps a uniform sample of everything
//! ever offered to it: item i (1-based) draws alpha uniform on [1, i] and
//! replaces slot alpha-1 when alpha lands inside the reservoir. One rng
//! stream must feed a buffer for its whole life; the uniformity guarantee
//! is over the joint sequence of draws.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::TrainItem;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Capacity {
    #[serde(rename = "unlimited")]
    Unlimited,
    #[serde(untagged)]
    Finite(usize),
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: Capacity,
    items: Vec<TrainItem>,
    seen: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: Capacity) -> ReplayBuffer {
        ReplayBuffer { capacity, items: vec![], seen: 0 }
    }

    pub fn capacity(&self) -> Capacity {
        self.capacity
    }

    /// Total items ever offered, kept or not.
    pub fn seen(&self) -> usize {
        self.seen
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[TrainItem] {
        &self.items
    }

    pub fn insert(&mut self, item: TrainItem, rng: &mut ChaCha8Rng) {
        self.seen += 1;
        match self.capacity {
            Capacity::Unlimited => self.items.push(item),
            Capacity::Finite(n) => {
                if self.items.len() < n {
                    self.items.push(item);
                } else {
                    let alpha = rng.random_range(1..=self.seen);
                    if alpha <= n {
                        self.items[alpha - 1] = item;
                    }
                }
            }
        }
    }
}
