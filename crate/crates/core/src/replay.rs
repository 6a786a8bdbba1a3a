//! Prioritized experience replay: a ring buffer of transitions with a sum
//! tree over priorities for proportional sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::TaskRng;

/// One experience sample (s, x, r, s', terminal).
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub disturbance: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Binary sum tree over leaf priorities. Parents store exact sums of their
/// children; updates recompute every ancestor from its children rather than
/// propagating diffs, so the root stays consistent with the leaves.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    tree: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.next_power_of_two().max(1);
        Self {
            leaves,
            tree: vec![0.0; 2 * leaves - 1],
        }
    }

    pub fn total(&self) -> f64 {
        self.tree[0]
    }

    pub fn get(&self, index: usize) -> f64 {
        self.tree[self.leaves - 1 + index]
    }

    pub fn update(&mut self, index: usize, priority: f64) {
        debug_assert!(priority >= 0.0 && priority.is_finite());
        let mut i = self.leaves - 1 + index;
        self.tree[i] = priority;
        while i > 0 {
            i = (i - 1) / 2;
            self.tree[i] = self.tree[2 * i + 1] + self.tree[2 * i + 2];
        }
    }

    /// Find the leaf where the prefix sum first exceeds `target`.
    pub fn find(&self, target: f64) -> usize {
        let mut i = 0;
        let mut t = target;
        while 2 * i + 1 < self.tree.len() {
            let left = 2 * i + 1;
            let right = left + 1;
            if t < self.tree[left] || self.tree[right] == 0.0 {
                i = left;
            } else {
                t -= self.tree[left];
                i = right;
            }
        }
        i - (self.leaves - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    pub capacity: usize,
    /// Priority exponent alpha.
    pub priority_exponent: f64,
    /// Importance exponent beta, annealed linearly start -> end with
    /// training progress.
    pub beta_start: f64,
    pub beta_end: f64,
    /// Priority floor added to |TD error| before exponentiation.
    pub priority_floor: f64,
    /// Disable to make all importance weights 1.
    pub importance_sampling: bool,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 100_000,
            priority_exponent: 0.6,
            beta_start: 0.4,
            beta_end: 1.0,
            priority_floor: 1e-3,
            importance_sampling: true,
        }
    }
}

/// A batch of sampled indices with importance weights (normalized by the
/// batch max).
#[derive(Debug, Clone)]
pub struct SampledBatch {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

pub struct ReplayBuffer {
    cfg: ReplayConfig,
    items: Vec<Transition>,
    next: usize,
    tree: SumTree,
    /// Running max of stored (exponentiated) priorities; new items get it.
    max_priority: f64,
    /// Training progress in [0, 1] for the beta anneal.
    progress: f64,
}

impl ReplayBuffer {
    pub fn new(cfg: ReplayConfig) -> Self {
        Self {
            items: Vec::with_capacity(cfg.capacity.min(4096)),
            next: 0,
            tree: SumTree::new(cfg.capacity),
            max_priority: 1.0,
            progress: 0.0,
            cfg,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.cfg.capacity
    }

    pub fn get(&self, index: usize) -> &Transition {
        &self.items[index]
    }

    pub fn set_progress(&mut self, progress: f64) {
        self.progress = progress.clamp(0.0, 1.0);
    }

    pub fn beta(&self) -> f64 {
        self.cfg.beta_start + (self.cfg.beta_end - self.cfg.beta_start) * self.progress
    }

    /// Priority assigned to the slot `index` (exponentiated scale).
    pub fn priority(&self, index: usize) -> f64 {
        self.tree.get(index)
    }

    /// Sum-tree root and the direct sum over leaves, for consistency checks.
    pub fn tree_total_and_leaf_sum(&self) -> (f64, f64) {
        let leaf_sum = (0..self.items.len()).map(|i| self.tree.get(i)).sum();
        (self.tree.total(), leaf_sum)
    }

    /// Store a transition with the running max priority (1.0 when empty),
    /// evicting the oldest when full.
    pub fn push(&mut self, t: Transition) {
        let idx = self.next;
        if self.items.len() < self.cfg.capacity {
            self.items.push(t);
        } else {
            self.items[idx] = t;
        }
        self.tree.update(idx, self.max_priority);
        self.next = (self.next + 1) % self.cfg.capacity;
    }

    /// Draw `batch_size` indices with probability proportional to priority,
    /// plus importance weights w_i = (N * P(i))^-beta normalized by the
    /// batch max.
    pub fn sample(&self, batch_size: usize, rng: &mut TaskRng) -> Result<SampledBatch> {
        if self.items.len() < batch_size {
            return Err(Error::NotEnoughSamples {
                size: self.items.len(),
                requested: batch_size,
            });
        }
        let total = self.tree.total();
        debug_assert!(total > 0.0);
        let n = self.items.len() as f64;
        let beta = self.beta();
        let mut indices = Vec::with_capacity(batch_size);
        let mut weights = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let u: f64 = rng.random::<f64>() * total;
            let idx = self.tree.find(u).min(self.items.len() - 1);
            let p = self.tree.get(idx) / total;
            indices.push(idx);
            weights.push(if self.cfg.importance_sampling {
                (n * p).powf(-beta)
            } else {
                1.0
            });
        }
        let w_max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for w in weights.iter_mut() {
            *w /= w_max;
        }
        Ok(SampledBatch { indices, weights })
    }

    /// priority_i <- (|td_i| + floor)^alpha
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) -> Result<()> {
        for (&idx, &td) in indices.iter().zip(td_errors) {
            if idx >= self.items.len() {
                return Err(Error::IndexOutOfRange {
                    index: idx,
                    len: self.items.len(),
                });
            }
            let p = (td.abs() + self.cfg.priority_floor).powf(self.cfg.priority_exponent);
            self.tree.update(idx, p);
            if p > self.max_priority {
                self.max_priority = p;
            }
        }
        Ok(())
    }
}
