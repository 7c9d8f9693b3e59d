use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HarnessError, RunConfig};
use crate::checkpoint::Checkpoint;
use crate::learner::{Agent, EpisodeStats, LearnerError};

/// One row of `metrics.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub score: f64,
    pub mean_w: f64,
    pub mean_d: f64,
    #[serde(rename = "mean_H_fb")]
    pub mean_h_fb: f64,
    #[serde(rename = "mean_H_ff")]
    pub mean_h_ff: f64,
    pub mean_delta: f64,
    pub loss_traj: f64,
    pub loss_value: f64,
    pub loss_model_recon: f64,
    pub loss_model_kl: f64,
    pub loss_model_ce: f64,
}

impl EpisodeRow {
    pub fn from_stats(episode: usize, st: &EpisodeStats) -> Self {
        let m = st.mean();
        Self {
            episode,
            score: st.score,
            mean_w: m.w,
            mean_d: m.d,
            mean_h_fb: m.h_fb,
            mean_h_ff: m.h_ff,
            mean_delta: m.delta,
            loss_traj: m.loss_traj,
            loss_value: m.loss_value,
            loss_model_recon: m.recon,
            loss_model_kl: m.kl,
            loss_model_ce: m.ce,
        }
    }
}

/// Episodes (1-based index of the later one) where the mean FF entropy jumps
/// by more than `threshold` nats from the previous episode.
pub fn ff_entropy_jumps(rows: &[EpisodeRow], threshold: f64) -> Vec<usize> {
    rows.windows(2)
        .filter(|p| (p[1].mean_h_ff - p[0].mean_h_ff).abs() > threshold)
        .map(|p| p[1].episode)
        .collect()
}

pub const FF_JUMP_NATS: f64 = 5.0;

/// A run that learned and then lost it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Collapse {
    /// Last episode of the best 10-episode window.
    pub peak_episode: usize,
    pub peak_mean: f64,
    pub final_mean: f64,
}

/// Flags a collapse when the best 10-episode mean score reached `success`
/// and the final 20 episodes average below a quarter of that peak.
pub fn detect_collapse(rows: &[EpisodeRow], success: f64) -> Option<Collapse> {
    if rows.len() < 30 {
        return None;
    }
    let (peak_end, peak) = rows
        .windows(10)
        .map(|w| (w[9].episode, w.iter().map(|r| r.score).sum::<f64>() / 10.0))
        .fold((0, f64::MIN), |best, x| if x.1 > best.1 { x } else { best });
    let tail = &rows[rows.len() - 20..];
    let final_mean = tail.iter().map(|r| r.score).sum::<f64>() / 20.0;
    (peak >= success && final_mean < 0.25 * peak).then_some(Collapse {
        peak_episode: peak_end,
        peak_mean: peak,
        final_mean,
    })
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub env: String,
    pub seed: u64,
    pub episodes: usize,
    pub last_k: usize,
    pub mean_last: f64,
    pub median_last: f64,
    /// Mean of the per-episode mixture ratio over the last `last_k` episodes.
    pub final_mean_w: f64,
    pub mean_w_first50: f64,
    pub mean_w_last50: f64,
    pub ff_jumps: Vec<usize>,
    pub collapse: Option<Collapse>,
    pub updates: u64,
    pub seconds: f64,
    pub aborted: Option<String>,
}

impl RunSummary {
    pub fn from_rows(cfg: &RunConfig, rows: &[EpisodeRow], success: f64) -> Self {
        let k = cfg.last_k.min(rows.len());
        let tail = &rows[rows.len() - k..];
        let mean = |xs: &[EpisodeRow], f: fn(&EpisodeRow) -> f64| {
            if xs.is_empty() {
                f64::NAN
            } else {
                xs.iter().map(f).sum::<f64>() / xs.len() as f64
            }
        };
        let scores: Vec<f64> = tail.iter().map(|r| r.score).collect();
        Self {
            config_hash: cfg.hash(),
            env: cfg.env.to_string(),
            seed: cfg.seed,
            episodes: rows.len(),
            last_k: k,
            mean_last: mean(tail, |r| r.score),
            median_last: median(&scores),
            final_mean_w: mean(tail, |r| r.mean_w),
            mean_w_first50: mean(&rows[..rows.len().min(50)], |r| r.mean_w),
            mean_w_last50: mean(&rows[rows.len().saturating_sub(50)..], |r| r.mean_w),
            ff_jumps: ff_entropy_jumps(rows, FF_JUMP_NATS),
            collapse: detect_collapse(rows, success),
            updates: 0,
            seconds: 0.0,
            aborted: None,
        }
    }
}

/// Written next to the metrics when training hits a non-finite value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub config_hash: String,
    pub seed: u64,
    pub episode: usize,
    pub error: String,
    pub last_rows: Vec<EpisodeRow>,
}

pub struct TrainOutcome {
    pub dir: PathBuf,
    pub rows: Vec<EpisodeRow>,
    pub summary: RunSummary,
    pub agent: Agent,
}

/// Score that marks a cart-pole run as solved.
pub const CARTPOLE_SUCCESS: f64 = 450.0;

fn success_threshold(cfg: &RunConfig) -> f64 {
    match cfg.env {
        crate::envs::EnvKind::CartPole => CARTPOLE_SUCCESS.min(0.9 * cfg.step_cap() as f64),
        _ => f64::INFINITY,
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Trains one seed into `cfg.out_dir`: `config.toml`, `metrics.csv`,
/// `checkpoints/`, `summary.json`, and `failure.json` on a non-finite abort.
pub fn run_train(cfg: &RunConfig) -> Result<TrainOutcome, HarnessError> {
    run_train_with(cfg, |_, _| {})
}

/// As [`run_train`], calling `progress` after every episode.
pub fn run_train_with(
    cfg: &RunConfig,
    mut progress: impl FnMut(&EpisodeRow, &RunConfig),
) -> Result<TrainOutcome, HarnessError> {
    let dir = cfg.out_dir.clone();
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| HarnessError::io(&ckpt_dir, e))?;
    let cfg_path = dir.join("config.toml");
    fs::write(&cfg_path, cfg.to_toml_string()).map_err(|e| HarnessError::io(&cfg_path, e))?;

    let mut env = cfg.build_env(false);
    let mut agent = Agent::new(cfg.hp, env.obs_dim(), env.action_dim(), cfg.seed)?;
    let metrics_path = dir.join("metrics.csv");
    let mut csv = csv::Writer::from_path(&metrics_path)?;
    let mut rows = Vec::with_capacity(cfg.episodes);
    let started = std::time::Instant::now();
    let cap = cfg.step_cap();

    for episode in 1..=cfg.episodes {
        let stats = match agent.train_episode(env.as_mut(), cap, |_| {}) {
            Ok(s) => s,
            Err(e @ LearnerError::NonFinite { .. }) => {
                csv.flush()
                    .map_err(|e| HarnessError::io(&metrics_path, e))?;
                let record = FailureRecord {
                    config_hash: cfg.hash(),
                    seed: cfg.seed,
                    episode,
                    error: e.to_string(),
                    last_rows: rows[rows.len().saturating_sub(10)..].to_vec(),
                };
                write_json(&dir.join("failure.json"), &record)?;
                let mut summary = RunSummary::from_rows(cfg, &rows, success_threshold(cfg));
                summary.aborted = Some(record.error);
                summary.updates = agent.updates();
                summary.seconds = started.elapsed().as_secs_f64();
                write_json(&dir.join("summary.json"), &summary)?;
                return Err(HarnessError::Diverged {
                    dir,
                    episode,
                    source: e,
                });
            }
            Err(e) => return Err(e.into()),
        };
        let row = EpisodeRow::from_stats(episode, &stats);
        csv.serialize(row)?;
        rows.push(row);
        progress(&row, cfg);
        if cfg.checkpoint_every > 0 && episode % cfg.checkpoint_every == 0 {
            Checkpoint::capture(&agent, cfg.seed, episode)
                .save(&ckpt_dir.join(format!("episode-{episode:05}.json")))?;
        }
    }
    csv.flush()
        .map_err(|e| HarnessError::io(&metrics_path, e))?;
    Checkpoint::capture(&agent, cfg.seed, cfg.episodes).save(&ckpt_dir.join("final.json"))?;

    let mut summary = RunSummary::from_rows(cfg, &rows, success_threshold(cfg));
    summary.updates = agent.updates();
    summary.seconds = started.elapsed().as_secs_f64();
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(TrainOutcome {
        dir,
        rows,
        summary,
        agent,
    })
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpisodeRow>, HarnessError> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize()
        .map(|r| r.map_err(HarnessError::from))
        .collect()
}
