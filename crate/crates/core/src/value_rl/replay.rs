//! Experience replay: uniform ring buffer and proportional prioritized
//! sampling over a sum tree.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Transition;

/// Binary sum tree over `capacity` leaves with O(log n) updates and
/// proportional sampling.
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
            tree: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.tree[1]
    }

    pub fn leaf(&self, idx: usize) -> f64 {
        self.tree[self.leaves + idx]
    }

    pub fn set(&mut self, idx: usize, weight: f64) {
        debug_assert!(idx < self.leaves);
        debug_assert!(weight >= 0.0);
        let mut pos = self.leaves + idx;
        self.tree[pos] = weight;
        while pos > 1 {
            pos /= 2;
            self.tree[pos] = self.tree[2 * pos] + self.tree[2 * pos + 1];
        }
    }

    /// Leaf index whose prefix-sum interval contains `u` in `[0, total)`.
    pub fn descend(&self, mut u: f64) -> usize {
        let mut pos = 1;
        while pos < self.leaves {
            let left = self.tree[2 * pos];
            if u < left {
                pos = 2 * pos;
            } else {
                u -= left;
                pos = 2 * pos + 1;
            }
        }
        pos - self.leaves
    }
}

/// Ring storage of transitions, optionally with proportional priorities.
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    next: usize,
    priorities: Option<SumTree>,
    alpha: f64,
    priority_eps: f64,
    /// Running maximum of raw priorities; new transitions start here.
    max_priority: f64,
}

impl ReplayBuffer {
    pub fn uniform(capacity: usize) -> Self {
        Self {
            capacity,
            storage: Vec::new(),
            next: 0,
            priorities: None,
            alpha: 0.0,
            priority_eps: 0.0,
            max_priority: 1.0,
        }
    }

    pub fn prioritized(capacity: usize, alpha: f64, priority_eps: f64) -> Self {
        Self {
            capacity,
            storage: Vec::new(),
            next: 0,
            priorities: Some(SumTree::new(capacity)),
            alpha,
            priority_eps,
            max_priority: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn is_prioritized(&self) -> bool {
        self.priorities.is_some()
    }

    pub fn get(&self, idx: usize) -> &Transition {
        &self.storage[idx]
    }

    pub fn push(&mut self, t: Transition) {
        let slot = self.next;
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[slot] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        let max_priority = self.max_priority;
        let alpha = self.alpha;
        if let Some(tree) = &mut self.priorities {
            tree.set(slot, max_priority.powf(alpha));
        }
    }

    /// `k` independent uniform draws (each index has probability `1/len`).
    pub fn sample_uniform(&self, rng: &mut ChaCha8Rng, k: usize) -> Vec<usize> {
        (0..k).map(|_| rng.random_range(0..self.storage.len())).collect()
    }

    /// Proportional draws plus importance-sampling weights normalized by the
    /// batch maximum: `w_i = (N P(i))^-beta / max_j w_j`.
    pub fn sample_prioritized(
        &self,
        rng: &mut ChaCha8Rng,
        k: usize,
        beta: f64,
    ) -> (Vec<usize>, Vec<f64>) {
        let tree = self.priorities.as_ref().expect("prioritized buffer");
        let n = self.storage.len() as f64;
        let total = tree.total();
        let mut indices = Vec::with_capacity(k);
        let mut weights = Vec::with_capacity(k);
        for _ in 0..k {
            let u: f64 = rng.random::<f64>() * total;
            let idx = tree.descend(u).min(self.storage.len() - 1);
            let p = tree.leaf(idx) / total;
            indices.push(idx);
            weights.push((n * p).powf(-beta));
        }
        let max_w = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for w in &mut weights {
            *w /= max_w;
        }
        (indices, weights)
    }

    /// Refresh priorities from fresh TD errors: `p_i = |delta_i| + eps_p`.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) {
        let alpha = self.alpha;
        let eps = self.priority_eps;
        let mut max_priority = self.max_priority;
        if let Some(tree) = &mut self.priorities {
            for (&idx, &delta) in indices.iter().zip(td_errors) {
                let p = delta.abs() + eps;
                tree.set(idx, p.powf(alpha));
                max_priority = max_priority.max(p);
            }
        }
        self.max_priority = max_priority;
    }

    /// Current sampling probability of one slot.
    pub fn probability(&self, idx: usize) -> f64 {
        match &self.priorities {
            Some(tree) => tree.leaf(idx) / tree.total(),
            None => 1.0 / self.storage.len() as f64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Action, ScheduleState};
    use crate::instances::parse_jssp;
    use std::sync::Arc;

    fn dummy_transition() -> Transition {
        let inst = Arc::new(parse_jssp("1 1\n0 5\n").unwrap());
        let state = ScheduleState::reset(inst);
        Transition {
            state,
            action: Action { job: 0, op: 0, machine: 0 },
            reward: 0.0,
            steps_ahead: vec![Action { job: 0, op: 0, machine: 0 }],
            done: true,
            discount: 0.99,
        }
    }

    #[test]
    fn sum_tree_totals_and_descent() {
        let mut tree = SumTree::new(5);
        for (i, w) in [1.0, 2.0, 3.0, 4.0, 0.5].into_iter().enumerate() {
            tree.set(i, w);
        }
        assert!((tree.total() - 10.5).abs() < 1e-12);
        // Prefix intervals: [0,1) -> 0, [1,3) -> 1, [3,6) -> 2, [6,10) -> 3.
        assert_eq!(tree.descend(0.5), 0);
        assert_eq!(tree.descend(1.0), 1);
        assert_eq!(tree.descend(2.999), 1);
        assert_eq!(tree.descend(3.0), 2);
        assert_eq!(tree.descend(9.999), 3);
        assert_eq!(tree.descend(10.2), 4);
        tree.set(1, 0.0);
        assert!((tree.total() - 8.5).abs() < 1e-12);
        assert_eq!(tree.descend(1.0), 2);
    }

    #[test]
    fn equal_priorities_sample_uniformly_with_unit_weights() {
        let mut buf = ReplayBuffer::prioritized(8, 0.4, 1e-5);
        for _ in 0..8 {
            buf.push(dummy_transition());
        }
        for i in 0..8 {
            assert!((buf.probability(i) - 0.125).abs() < 1e-9);
        }
        let mut rng = crate::rng::stream(5, 0);
        let (_, weights) = buf.sample_prioritized(&mut rng, 32, 0.4);
        assert!(weights.iter().all(|&w| (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn proportional_probabilities_alpha_one_and_point_four() {
        // alpha = 1: priorities {1, 3} -> probabilities {0.25, 0.75}.
        let mut buf = ReplayBuffer::prioritized(2, 1.0, 0.0);
        buf.push(dummy_transition());
        buf.push(dummy_transition());
        buf.update_priorities(&[0, 1], &[1.0, 3.0]);
        assert!((buf.probability(0) - 0.25).abs() < 1e-12);
        assert!((buf.probability(1) - 0.75).abs() < 1e-12);
        // alpha = 0.4: 3^0.4 = 1.5518... -> {0.3919, 0.6081}.
        let mut buf = ReplayBuffer::prioritized(2, 0.4, 0.0);
        buf.push(dummy_transition());
        buf.push(dummy_transition());
        buf.update_priorities(&[0, 1], &[1.0, 3.0]);
        assert!((buf.probability(0) - 0.3919).abs() < 1e-4);
        assert!((buf.probability(1) - 0.6081).abs() < 1e-4);
    }

    #[test]
    fn new_transitions_enter_at_running_max_priority() {
        let mut buf = ReplayBuffer::prioritized(4, 1.0, 0.0);
        buf.push(dummy_transition());
        buf.update_priorities(&[0], &[7.0]);
        buf.push(dummy_transition());
        // Slot 1 must carry priority 7 (running max), same as slot 0.
        assert!((buf.probability(1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut buf = ReplayBuffer::uniform(2);
        for _ in 0..5 {
            buf.push(dummy_transition());
        }
        assert_eq!(buf.len(), 2);
        let mut rng = crate::rng::stream(6, 0);
        let idx = buf.sample_uniform(&mut rng, 16);
        assert!(idx.iter().all(|&i| i < 2));
    }

    #[test]
    fn prioritized_sampling_tracks_probabilities_empirically() {
        let mut buf = ReplayBuffer::prioritized(4, 1.0, 0.0);
        for _ in 0..4 {
            buf.push(dummy_transition());
        }
        buf.update_priorities(&[0, 1, 2, 3], &[1.0, 1.0, 2.0, 4.0]);
        let mut rng = crate::rng::stream(7, 0);
        let mut counts = [0usize; 4];
        let draws = 40_000;
        let (indices, _) = buf.sample_prioritized(&mut rng, draws, 0.4);
        for i in indices {
            counts[i] += 1;
        }
        for i in 0..4 {
            let expected = buf.probability(i);
            let got = counts[i] as f64 / draws as f64;
            assert!((got - expected).abs() < 0.01, "slot {i}: {got} vs {expected}");
        }
    }
}
