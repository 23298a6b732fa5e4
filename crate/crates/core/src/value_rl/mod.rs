//! Value-based training: DQN plus six independently toggleable extensions.
//!
//! The [`RainbowConfig`] booleans select double q-learning, prioritized
//! replay, dueling heads, noisy exploration, categorical (distributional)
//! returns and multi-step targets; all 64 combinations are valid. With every
//! toggle off the learner is plain DQN: uniform replay, 1-step scalar
//! targets from a periodically synced target network, epsilon-greedy acting.

mod learner;
mod replay;

pub use learner::{
    categorical_targets, project_mass, scalar_target, select_and_eval, td_targets, AtomGrid,
    TrainError, ValueLearner,
};
pub use replay::{ReplayBuffer, SumTree};

use serde::{Deserialize, Serialize};

use crate::env::{Action, ScheduleState};
use crate::instances::Problem;

/// All value-based hyperparameters plus the six extension toggles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RainbowConfig {
    pub ddqn: bool,
    pub per: bool,
    pub dueling: bool,
    pub noisy: bool,
    pub distributional: bool,
    pub multistep: bool,

    /// Multi-step horizon (used when `multistep` is on).
    pub n_steps: usize,
    /// Categorical return grid (used when `distributional` is on).
    pub atoms: usize,
    pub v_min: f64,
    pub v_max: f64,

    pub gamma: f64,
    pub buffer_capacity: usize,
    pub batch: usize,
    /// Target network sync period, in episodes.
    pub target_period: usize,
    pub lr: f64,
    pub per_alpha: f64,
    /// Importance-sampling exponent at the start of training; anneals to 1.
    pub per_beta0: f64,
    pub per_eps: f64,
    /// Episode scale of the exponential epsilon decay.
    pub eps_decay: f64,
    pub eps_min: f64,
    /// Gradient steps per environment step.
    pub update_every: usize,
}

impl RainbowConfig {
    /// Problem-specific defaults: the multi-step horizon and the categorical
    /// value range differ between the two problems.
    pub fn defaults(problem: Problem) -> Self {
        let (n_steps, v_min, v_max) = match problem {
            Problem::Jssp => (2, -600.0, -50.0),
            Problem::Fjsp => (4, -50.0, 0.0),
        };
        Self {
            ddqn: false,
            per: false,
            dueling: false,
            noisy: false,
            distributional: false,
            multistep: false,
            n_steps,
            atoms: 51,
            v_min,
            v_max,
            gamma: 0.99,
            buffer_capacity: 20_000,
            batch: 32,
            target_period: 10,
            lr: 2e-4,
            per_alpha: 0.4,
            per_beta0: 0.4,
            per_eps: 1e-5,
            eps_decay: 600.0,
            eps_min: 0.1,
            update_every: 1,
        }
    }

    /// All six extensions on.
    pub fn rainbow(problem: Problem) -> Self {
        Self {
            ddqn: true,
            per: true,
            dueling: true,
            noisy: true,
            distributional: true,
            multistep: true,
            ..Self::defaults(problem)
        }
    }

    /// Effective multi-step horizon: 1 unless multi-step is enabled.
    pub fn effective_n(&self) -> usize {
        if self.multistep {
            self.n_steps
        } else {
            1
        }
    }

    /// A short tag like `dqn` or `ddqn+per+dueling` naming the composition.
    pub fn tag(&self) -> String {
        let mut parts = Vec::new();
        if self.ddqn {
            parts.push("ddqn");
        }
        if self.per {
            parts.push("per");
        }
        if self.dueling {
            parts.push("dueling");
        }
        if self.noisy {
            parts.push("noisy");
        }
        if self.distributional {
            parts.push("distributional");
        }
        if self.multistep {
            parts.push("multistep");
        }
        if parts.is_empty() {
            "dqn".to_string()
        } else {
            parts.join("+")
        }
    }
}

/// Exploration rate at `episode`: `max(exp(-episode / decay), eps_min)`,
/// or exactly 0 when noisy layers carry the exploration.
pub fn epsilon(cfg: &RainbowConfig, episode: usize) -> f64 {
    if cfg.noisy {
        return 0.0;
    }
    (-(episode as f64) / cfg.eps_decay).exp().max(cfg.eps_min)
}

/// One replay unit. The pre-decision state is stored as a compact snapshot;
/// the post-decision state is reconstructed on demand by replaying the
/// recorded actions, which keeps buffer memory bounded by the snapshot size.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: ScheduleState,
    pub action: Action,
    /// Discounted reward aggregate over `steps_ahead`.
    pub reward: f64,
    /// The actions from `state` to the bootstrap state (first is `action`).
    pub steps_ahead: Vec<Action>,
    pub done: bool,
    /// Effective bootstrap discount `gamma^k`.
    pub discount: f64,
}

impl Transition {
    /// Materialize the bootstrap state `s_{t+k}`.
    pub fn next_state(&self) -> ScheduleState {
        let mut s = self.state.clone();
        for &a in &self.steps_ahead {
            s.step(a).expect("recorded actions replay feasibly");
        }
        s
    }
}

/// Sliding window that turns per-step rewards into (possibly multi-step)
/// transitions: `r = sum gamma^i r_{t+i}` truncated at the episode end.
pub struct NStepWindow {
    n: usize,
    gamma: f64,
    queue: std::collections::VecDeque<(ScheduleState, Action, f64)>,
}

impl NStepWindow {
    pub fn new(n: usize, gamma: f64) -> Self {
        assert!(n >= 1);
        Self {
            n,
            gamma,
            queue: std::collections::VecDeque::with_capacity(n),
        }
    }

    fn build(&self, from: usize, done: bool) -> Transition {
        let mut reward = 0.0;
        let mut discount = 1.0;
        let mut steps = Vec::with_capacity(self.queue.len() - from);
        for (_, action, r) in self.queue.iter().skip(from) {
            reward += discount * r;
            discount *= self.gamma;
            steps.push(*action);
        }
        let (state, action, _) = &self.queue[from];
        Transition {
            state: state.clone(),
            action: *action,
            reward,
            steps_ahead: steps,
            done,
            discount,
        }
    }

    /// Record one step. Returns the matured transition once the window holds
    /// `n` steps. Call [`Self::flush_terminal`] instead of relying on the
    /// return value when this step ended the episode.
    pub fn push(&mut self, state: ScheduleState, action: Action, reward: f64) -> Option<Transition> {
        self.queue.push_back((state, action, reward));
        if self.queue.len() == self.n {
            let t = self.build(0, false);
            self.queue.pop_front();
            Some(t)
        } else {
            None
        }
    }

    /// Episode ended: every remaining window entry becomes a terminal
    /// transition with a truncated horizon.
    pub fn flush_terminal(&mut self) -> Vec<Transition> {
        let out = (0..self.queue.len()).map(|i| self.build(i, true)).collect();
        self.queue.clear();
        out
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }
}
