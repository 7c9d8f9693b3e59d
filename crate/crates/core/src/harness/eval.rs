use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{write_json, HarnessError, RunConfig};
use crate::checkpoint::Checkpoint;
use crate::envs::{EnvKind, FailureRegion};
use crate::learner::Agent;
use crate::policy::EvalMode;

/// One step of a deterministic rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub obs: Vec<f64>,
    /// Raw network output.
    pub action: Vec<f64>,
    /// Action as the environment applies it: stiffness `sigmoid(a)` for the
    /// snake, force `max_force tanh(a)` for the cart-pole.
    pub applied: Vec<f64>,
    pub reward: f64,
    /// True pose after the step, when the environment has one.
    pub pose: Option<(f64, f64)>,
    pub failing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub env: String,
    pub mode: EvalMode,
    pub failure: FailureRegion,
    pub score: f64,
    pub steps: usize,
    pub final_x: Option<f64>,
    pub final_y: Option<f64>,
    pub mean_abs_y: Option<f64>,
    /// The head passed the far end of the field.
    pub reached_goal: bool,
    pub failing_steps: usize,
}

pub struct EvalOutcome {
    pub report: EvalReport,
    pub trajectory: Vec<TrajectoryStep>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn applied(cfg: &RunConfig, a: &[f64]) -> Vec<f64> {
    match cfg.env {
        EnvKind::Snake => a.iter().map(|&x| sigmoid(x)).collect(),
        EnvKind::CartPole => a
            .iter()
            .map(|&x| cfg.cart_pole.max_force * x.tanh())
            .collect(),
        EnvKind::Bandit => a.to_vec(),
    }
}

/// Deterministic rollout of `agent` (median noise) with the given mode;
/// `failure` turns on the configured sensing failure.
pub fn rollout(
    agent: &mut Agent,
    cfg: &RunConfig,
    mode: EvalMode,
    failure: bool,
) -> Result<EvalOutcome, HarnessError> {
    let mut env = cfg.build_env(failure);
    if agent.state_dim() != env.obs_dim() || agent.action_dim() != env.action_dim() {
        return Err(HarnessError::Mismatch(format!(
            "agent is {}x{}, environment {} is {}x{}",
            agent.state_dim(),
            agent.action_dim(),
            cfg.env,
            env.obs_dim(),
            env.action_dim()
        )));
    }
    let region = if failure {
        cfg.failure
    } else {
        FailureRegion::Never
    };
    agent.begin_episode();
    let mut s = env.reset();
    let mut trajectory = Vec::new();
    let mut score = 0.0;
    for _ in 0..cfg.step_cap() {
        let d = agent.act_eval(&s, mode)?;
        let step = env.step(&d.action);
        let pose = env.pose();
        score += step.reward;
        trajectory.push(TrajectoryStep {
            obs: step.obs.clone(),
            applied: applied(cfg, &d.action),
            action: d.action.clone(),
            reward: step.reward,
            pose,
            failing: pose.is_some_and(|(x, y)| region.contains(x, y)),
        });
        agent.observe(&s, &d.action)?;
        if step.done() {
            break;
        }
        s = step.obs;
    }
    let last_pose = trajectory.last().and_then(|t| t.pose);
    let ys: Vec<f64> = trajectory
        .iter()
        .filter_map(|t| t.pose.map(|p| p.1.abs()))
        .collect();
    let reached_goal = match (cfg.env, last_pose) {
        (EnvKind::Snake, Some((x, _))) => x > cfg.snake.field_length,
        _ => false,
    };
    let report = EvalReport {
        config_hash: cfg.hash(),
        env: cfg.env.to_string(),
        mode,
        failure: region,
        score,
        steps: trajectory.len(),
        final_x: last_pose.map(|p| p.0),
        final_y: last_pose.map(|p| p.1),
        mean_abs_y: (!ys.is_empty()).then(|| ys.iter().sum::<f64>() / ys.len() as f64),
        reached_goal,
        failing_steps: trajectory.iter().filter(|t| t.failing).count(),
    };
    Ok(EvalOutcome { report, trajectory })
}

/// Writes one row per step: pose, failure flag, observation, raw action and
/// applied action (`k_i` columns for the snake).
pub fn write_trajectory(
    path: &Path,
    cfg: &RunConfig,
    traj: &[TrajectoryStep],
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    let Some(first) = traj.first() else {
        w.flush().map_err(|e| HarnessError::io(path, e))?;
        return Ok(());
    };
    let applied_name = match cfg.env {
        EnvKind::Snake => "k",
        EnvKind::CartPole => "force",
        EnvKind::Bandit => "u",
    };
    let mut header = vec![
        "step".to_string(),
        "reward".into(),
        "x".into(),
        "y".into(),
        "failing".into(),
    ];
    header.extend((0..first.obs.len()).map(|i| format!("obs_{i}")));
    header.extend((0..first.action.len()).map(|i| format!("a_{i}")));
    header.extend((0..first.applied.len()).map(|i| format!("{applied_name}_{i}")));
    w.write_record(&header)?;
    for (t, st) in traj.iter().enumerate() {
        let (x, y) = st.pose.unwrap_or((f64::NAN, f64::NAN));
        let mut rec = vec![
            (t + 1).to_string(),
            st.reward.to_string(),
            x.to_string(),
            y.to_string(),
            u8::from(st.failing).to_string(),
        ];
        rec.extend(
            st.obs
                .iter()
                .chain(&st.action)
                .chain(&st.applied)
                .map(|v| v.to_string()),
        );
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Loads `checkpoint`, evaluates it and writes `eval-<mode>[-failure].json`
/// and the matching trajectory CSV into `out_dir`.
pub fn run_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    mode: EvalMode,
    failure: bool,
    out_dir: &Path,
) -> Result<(EvalReport, PathBuf), HarnessError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut agent = ckpt.restore()?;
    let out = rollout(&mut agent, cfg, mode, failure)?;
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let stem = format!("eval-{mode}{}", if failure { "-failure" } else { "" });
    let traj_path = out_dir.join(format!("{stem}-trajectory.csv"));
    write_trajectory(&traj_path, cfg, &out.trajectory)?;
    write_json(&out_dir.join(format!("{stem}.json")), &out.report)?;
    Ok((out.report, traj_path))
}
