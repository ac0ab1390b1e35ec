//! Ring buffer of transitions with uniform sampling of valid segments.

use rand::Rng;
use rand::RngCore;

use crate::model::EpisodeSegment;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub episode: u64,
    pub obs: Vec<f64>,
    pub goal: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub duration: usize,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Physical index of the oldest item once the buffer has wrapped.
    head: usize,
}

/// How many random draws to try before enumerating valid starts.
const REJECTION_TRIES: usize = 64;

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
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

    /// Append, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Transition at logical index `i` (0 = oldest).
    pub fn get(&self, i: usize) -> &Transition {
        &self.items[(self.head + i) % self.items.len()]
    }

    /// Length of the segment starting at logical index `i`, if valid: `n`
    /// transitions of one episode, or fewer ending on a terminal.
    pub fn segment_len(&self, i: usize, n: usize) -> Option<usize> {
        let ep = self.get(i).episode;
        for m in 0..n {
            if i + m >= self.len() {
                return None;
            }
            let t = self.get(i + m);
            if t.episode != ep {
                return None;
            }
            if t.terminal {
                return Some(m + 1);
            }
        }
        Some(n)
    }

    pub fn valid_starts(&self, n: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.segment_len(i, n).is_some()).collect()
    }

    pub fn segment(&self, start: usize, len: usize) -> EpisodeSegment {
        let first = self.get(start);
        let mut seg = EpisodeSegment {
            observations: Vec::with_capacity(len + 1),
            goal: first.goal.clone(),
            actions: Vec::with_capacity(len),
            rewards: Vec::with_capacity(len),
            durations: Vec::with_capacity(len),
            terminal: Vec::with_capacity(len),
        };
        for m in 0..len {
            let t = self.get(start + m);
            seg.observations.push(t.obs.clone());
            seg.actions.push(t.action.clone());
            seg.rewards.push(t.reward);
            seg.durations.push(t.duration);
            seg.terminal.push(t.terminal);
        }
        seg.observations.push(self.get(start + len - 1).next_obs.clone());
        seg
    }

    /// One segment with a start drawn uniformly from the valid starts.
    pub fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<EpisodeSegment> {
        if self.is_empty() || n == 0 {
            return Err(Error::WarmupIncomplete(n));
        }
        // rejection sampling keeps the draw uniform over valid starts
        for _ in 0..REJECTION_TRIES {
            let i = rng.gen_range(0..self.len());
            if let Some(len) = self.segment_len(i, n) {
                return Ok(self.segment(i, len));
            }
        }
        let starts = self.valid_starts(n);
        if starts.is_empty() {
            return Err(Error::WarmupIncomplete(n));
        }
        let i = starts[rng.gen_range(0..starts.len())];
        Ok(self.segment(i, self.segment_len(i, n).expect("valid")))
    }

    pub fn sample_batch(&self, batch: usize, n: usize, rng: &mut dyn RngCore) -> Result<Vec<EpisodeSegment>> {
        (0..batch).map(|_| self.sample(n, rng)).collect()
    }
}
