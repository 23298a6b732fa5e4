//! Versioned checkpoint container.
//!
//! A checkpoint holds the full model (layout description plus every
//! parameter tensor), the algorithm configuration it was trained with, and
//! selection metadata. The JSON encoding round-trips `f64` values exactly,
//! so a reloaded checkpoint is bit-identical to the saved one.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::ModelParams;
use crate::env::{Action, ScheduleState};
use crate::instances::Problem;
use crate::policy_rl::{PGConfig, PGLearner};
use crate::value_rl::{AtomGrid, RainbowConfig, ValueLearner};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("failed to {action} checkpoint at {path}: {source}")]
    Io {
        action: &'static str,
        path: String,
        source: std::io::Error,
    },
    #[error("invalid checkpoint at {path}: {source}")]
    Format {
        path: String,
        source: serde_json::Error,
    },
    #[error("unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})")]
    Version { found: u32 },
}

/// Which trainer produced the model, with its full configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CheckpointKind {
    Value { rainbow: RainbowConfig },
    Policy { pg: PGConfig },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub problem: Problem,
    /// Short algorithm tag (`dqn`, `ddqn+per`, `ppo`, ...).
    pub algorithm: String,
    pub kind: CheckpointKind,
    pub model: ModelParams,
    /// Episode at which this model was selected.
    pub episode: usize,
    /// Mean validation makespan that selected this model.
    pub validation_makespan: f64,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let json = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, json).map_err(|source| CheckpointError::Io {
            action: "write",
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            action: "read",
            path: path.display().to_string(),
            source,
        })?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|source| CheckpointError::Format {
                path: path.display().to_string(),
                source,
            })?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version {
                found: ckpt.version,
            });
        }
        Ok(ckpt)
    }

    /// Deterministic greedy action under this checkpoint's policy (argmax,
    /// zero exploration noise).
    pub fn greedy_action(&self, state: &ScheduleState) -> Action {
        match &self.kind {
            CheckpointKind::Value { rainbow } => {
                let grid = rainbow
                    .distributional
                    .then(|| AtomGrid::new(rainbow.v_min, rainbow.v_max, rainbow.atoms));
                ValueLearner::greedy_action(&self.model, state, grid.as_ref())
            }
            CheckpointKind::Policy { .. } => PGLearner::greedy_action(&self.model, state),
        }
    }
}
