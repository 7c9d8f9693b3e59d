use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::envs::{
    CartPole, CartPoleConfig, EnvKind, Environment, FailureRegion, QuadraticBandit, SensingFailure,
    Snake, SnakeConfig,
};
use crate::learner::Hyperparams;
use crate::policy::EvalMode;

/// Run-level settings. Learner hyperparameters sit beside these keys in the
/// same flat table; environment constants go in optional `[cart_pole]` and
/// `[snake]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunKeys {
    env: EnvKind,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_episodes")]
    episodes: usize,
    /// Overrides the environment's own step cap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_steps: Option<usize>,
    #[serde(default = "default_out_dir")]
    out_dir: PathBuf,
    /// Checkpoint every this many episodes; 0 keeps only the final one.
    #[serde(default)]
    checkpoint_every: usize,
    #[serde(default)]
    eval_mode: EvalMode,
    #[serde(default)]
    failure: FailureRegion,
    /// Episodes averaged in the summary.
    #[serde(default = "default_last_k")]
    last_k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cart_pole: Option<CartPoleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    snake: Option<SnakeConfig>,
}

fn default_episodes() -> usize {
    300
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_last_k() -> usize {
    20
}

const RUN_KEYS: &[&str] = &[
    "env",
    "seed",
    "episodes",
    "max_steps",
    "out_dir",
    "checkpoint_every",
    "eval_mode",
    "failure",
    "last_k",
    "cart_pole",
    "snake",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvKind,
    pub seed: u64,
    pub episodes: usize,
    pub max_steps: Option<usize>,
    pub out_dir: PathBuf,
    pub checkpoint_every: usize,
    pub eval_mode: EvalMode,
    pub failure: FailureRegion,
    pub last_k: usize,
    pub cart_pole: CartPoleConfig,
    pub snake: SnakeConfig,
    pub hp: Hyperparams,
}

impl RunConfig {
    pub fn new(env: EnvKind) -> Self {
        Self {
            env,
            seed: 0,
            episodes: default_episodes(),
            max_steps: None,
            out_dir: default_out_dir(),
            checkpoint_every: 0,
            eval_mode: EvalMode::Composed,
            failure: FailureRegion::Never,
            last_k: default_last_k(),
            cart_pole: CartPoleConfig::default(),
            snake: SnakeConfig::default(),
            hp: Hyperparams::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        let (run, hp): (toml::Table, toml::Table) = table
            .into_iter()
            .partition(|(k, _)| RUN_KEYS.contains(&k.as_str()));
        let keys: RunKeys = run
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        let hp: Hyperparams = hp
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        hp.validate()?;
        Ok(Self {
            env: keys.env,
            seed: keys.seed,
            episodes: keys.episodes,
            max_steps: keys.max_steps,
            out_dir: keys.out_dir,
            checkpoint_every: keys.checkpoint_every,
            eval_mode: keys.eval_mode,
            failure: keys.failure,
            last_k: keys.last_k.max(1),
            cart_pole: keys.cart_pole.unwrap_or_default(),
            snake: keys.snake.unwrap_or_default(),
            hp,
        })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Flat TOML that parses back to the same config. Only the table of the
    /// selected environment is written.
    pub fn to_toml_string(&self) -> String {
        let keys = RunKeys {
            env: self.env,
            seed: self.seed,
            episodes: self.episodes,
            max_steps: self.max_steps,
            out_dir: self.out_dir.clone(),
            checkpoint_every: self.checkpoint_every,
            eval_mode: self.eval_mode,
            failure: self.failure,
            last_k: self.last_k,
            cart_pole: (self.env == EnvKind::CartPole).then_some(self.cart_pole),
            snake: (self.env == EnvKind::Snake).then_some(self.snake),
        };
        let mut table = toml::Table::try_from(&keys).expect("run keys serialize");
        let hp = toml::Table::try_from(self.hp).expect("hyperparameters serialize");
        // plain keys must precede the sub-tables
        let tables: Vec<_> = ["cart_pole", "snake"]
            .into_iter()
            .filter_map(|k| table.remove(k).map(|v| (k.to_string(), v)))
            .collect();
        table.extend(hp);
        table.extend(tables);
        toml::to_string(&table).expect("config serializes")
    }

    /// Short digest of the serialized config without its output directory;
    /// stamped on every artifact of a run.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let digest = Sha256::digest(c.to_toml_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn obs_dim(&self) -> usize {
        self.build_env(false).obs_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.build_env(false).action_dim()
    }

    /// A fresh environment; with `failure` the configured sensing failure is applied.
    pub fn build_env(&self, failure: bool) -> Box<dyn Environment + Send> {
        let env_seed = self.seed ^ ENV_STREAM;
        match self.env {
            EnvKind::CartPole => {
                let mut c = self.cart_pole;
                if let Some(n) = self.max_steps {
                    c.max_steps = n;
                }
                wrap(CartPole::new(c, env_seed), failure.then_some(self.failure))
            }
            EnvKind::Snake => {
                let mut c = self.snake;
                if let Some(n) = self.max_steps {
                    c.max_steps = n;
                }
                wrap(Snake::new(c), failure.then_some(self.failure))
            }
            EnvKind::Bandit => wrap(QuadraticBandit, failure.then_some(self.failure)),
        }
    }

    /// Upper bound on steps per episode, used as a safety net over the
    /// environment's own cap.
    pub fn step_cap(&self) -> usize {
        self.max_steps.unwrap_or(match self.env {
            EnvKind::CartPole => self.cart_pole.max_steps,
            EnvKind::Snake => self.snake.max_steps,
            EnvKind::Bandit => 1,
        })
    }
}

const ENV_STREAM: u64 = 0x2545_f491_4f6c_dd1d;

fn wrap<E: Environment + Send + 'static>(
    env: E,
    failure: Option<FailureRegion>,
) -> Box<dyn Environment + Send> {
    match failure {
        Some(r) if r != FailureRegion::Never => Box::new(SensingFailure::new(env, r)),
        _ => Box::new(env),
    }
}
