//! Saved agents: hyperparameters, reservoir specs and every weight, in JSON.
//! Floats are written in shortest round-trip form, so a reload reproduces
//! forward passes bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::ParamStore;
use crate::learner::{Agent, Hyperparams, LearnerError};
use crate::networks::ReservoirSpec;

pub const CHECKPOINT_FORMAT: &str = "fbff-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(#[from] serde_json::Error),
    #[error("not a checkpoint (format {format:?}, version {version})")]
    Header { format: String, version: u32 },
    #[error("checkpoint parameter {0:?} does not match the rebuilt network")]
    Layout(String),
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedParam {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub value: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub state_dim: usize,
    pub action_dim: usize,
    pub updates: u64,
    pub episodes: usize,
    pub hyperparams: Hyperparams,
    pub state_reservoir: ReservoirSpec,
    pub action_reservoir: ReservoirSpec,
    pub params: Vec<SavedParam>,
}

impl Checkpoint {
    pub fn capture(agent: &Agent, seed: u64, episodes: usize) -> Self {
        let params = agent
            .store
            .iter()
            .zip(agent.target.iter())
            .map(|((_, p), (_, t))| SavedParam {
                name: p.name.clone(),
                rows: p.rows,
                cols: p.cols,
                value: p.value.clone(),
                target: t.value.clone(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed,
            state_dim: agent.state_dim(),
            action_dim: agent.action_dim(),
            updates: agent.updates(),
            episodes,
            hyperparams: agent.hp,
            state_reservoir: *agent.hs.spec(),
            action_reservoir: *agent.ha.spec(),
            params,
        }
    }

    /// Rebuilds the agent. Optimizer moments are not stored and restart at zero.
    pub fn restore(&self) -> Result<Agent, CheckpointError> {
        let mut agent = Agent::with_reservoirs(
            self.hyperparams,
            self.state_dim,
            self.action_dim,
            self.seed,
            self.state_reservoir,
            self.action_reservoir,
        )?;
        load_values(&mut agent.store, &self.params, false)?;
        load_values(&mut agent.target, &self.params, true)?;
        Ok(agent)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Header {
                format: ckpt.format,
                version: ckpt.version,
            });
        }
        Ok(ckpt)
    }
}

fn load_values(
    store: &mut ParamStore,
    saved: &[SavedParam],
    target: bool,
) -> Result<(), CheckpointError> {
    if saved.len() != store.len() {
        return Err(CheckpointError::Layout(format!(
            "{} parameters saved, {} expected",
            saved.len(),
            store.len()
        )));
    }
    for s in saved {
        let id = store
            .id(&s.name)
            .ok_or_else(|| CheckpointError::Layout(s.name.clone()))?;
        let p = store.get_mut(id);
        let src = if target { &s.target } else { &s.value };
        if p.rows != s.rows || p.cols != s.cols || src.len() != p.value.len() {
            return Err(CheckpointError::Layout(s.name.clone()));
        }
        p.value.copy_from_slice(src);
    }
    Ok(())
}
