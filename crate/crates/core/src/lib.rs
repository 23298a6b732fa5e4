//! Job-shop and flexible job-shop scheduling with deep reinforcement learning.
//!
//! The crate is organized around a dispatching MDP: states are partial
//! schedules over a heterogeneous operation/machine graph, actions are
//! feasible operation-machine pairs, and the reward is the negative increase
//! of the partial-schedule makespan, so that the undiscounted return of an
//! episode telescopes to `C(S_0) - C_max`.
//!
//! Modules:
//! - [`instances`]: problem data model, random generators, benchmark file I/O
//! - [`env`]: the MDP simulator with feasibility masking and node features
//! - [`tape`]: reverse-mode autodiff over small dense matrices
//! - [`encoder`]: heterogeneous graph attention encoder and scoring heads
//! - [`value_rl`]: DQN with six independently toggleable Rainbow extensions
//! - [`policy_rl`]: REINFORCE, A2C, PPO and V-MPO
//! - [`harness`]: training orchestration, evaluation, statistics, reports
//! - [`cli`]: command-line entry point

pub mod checkpoint;
pub mod cli;
pub mod encoder;
pub mod env;
pub mod harness;
pub mod instances;
pub mod optim;
pub mod policy_rl;
pub mod rng;
pub mod tape;
pub mod value_rl;
