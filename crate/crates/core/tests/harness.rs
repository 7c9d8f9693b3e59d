use std::fs;

use fbff::envs::{EnvKind, FailureRegion};
use fbff::harness::{
    plot_data, read_metrics, run_eval, run_sweep, run_train, seed_dir, RunConfig, CARTPOLE_SUCCESS,
};
use fbff::policy::EvalMode;

fn small(env: EnvKind, dir: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::new(env);
    cfg.out_dir = dir.to_path_buf();
    cfg.hp.hidden = 12;
    cfg.hp.reservoir_units = 10;
    cfg.hp.reservoir_layers = 2;
    cfg.hp.latent_dim = 2;
    cfg
}

#[test]
fn full_length_run_writes_one_row_per_episode() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(EnvKind::CartPole, tmp.path());
    cfg.episodes = 300;
    cfg.max_steps = Some(40);
    cfg.checkpoint_every = 100;
    let out = run_train(&cfg).unwrap();
    let rows = read_metrics(&tmp.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 300);
    assert_eq!(rows, out.rows);
    assert_eq!(rows.last().unwrap().episode, 300);
    for name in [
        "config.toml",
        "summary.json",
        "checkpoints/final.json",
        "checkpoints/episode-00200.json",
    ] {
        assert!(tmp.path().join(name).is_file(), "missing {name}");
    }
    let header = fs::read_to_string(tmp.path().join("metrics.csv")).unwrap();
    let header = header.lines().next().unwrap();
    assert!(
        header.starts_with("episode,score,mean_w,mean_d,mean_H_fb,mean_H_ff"),
        "{header}"
    );
    // the stored config reproduces the run's hash
    let again = RunConfig::load(&tmp.path().join("config.toml")).unwrap();
    assert_eq!(again.hash(), out.summary.config_hash);
}

#[test]
fn same_seed_replays_the_same_csv() {
    let run = |name: &str| {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = small(EnvKind::CartPole, &tmp.path().join(name));
        cfg.episodes = 15;
        cfg.seed = 4;
        run_train(&cfg).unwrap();
        fs::read_to_string(cfg.out_dir.join("metrics.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn ff_evaluation_ignores_sensing_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(EnvKind::Snake, tmp.path());
    cfg.episodes = 2;
    cfg.max_steps = Some(150);
    cfg.failure = FailureRegion::LeftOf(0.5);
    run_train(&cfg).unwrap();
    let ckpt = tmp.path().join("checkpoints/final.json");
    let eval_dir = tmp.path().join("eval");
    let (plain, p_traj) = run_eval(&cfg, &ckpt, EvalMode::FfOnly, false, &eval_dir).unwrap();
    let (failing, f_traj) = run_eval(&cfg, &ckpt, EvalMode::FfOnly, true, &eval_dir).unwrap();
    assert!(
        failing.failing_steps > 0,
        "the failure region must be visited"
    );
    assert_eq!(
        plain.final_y.unwrap().to_bits(),
        failing.final_y.unwrap().to_bits()
    );
    // trajectories differ only in the observation columns and the failure flag
    let strip = |path: &std::path::Path| -> Vec<Vec<String>> {
        let mut r = csv::Reader::from_path(path).unwrap();
        let headers = r.headers().unwrap().clone();
        r.records()
            .map(|rec| {
                rec.unwrap()
                    .iter()
                    .zip(headers.iter())
                    .filter(|(_, h)| !h.starts_with("obs_") && *h != "failing")
                    .map(|(v, _)| v.to_string())
                    .collect()
            })
            .collect()
    };
    assert_eq!(strip(&p_traj), strip(&f_traj));
    let header = fs::read_to_string(&p_traj).unwrap();
    assert!(
        header.lines().next().unwrap().contains("a_7,k_0"),
        "raw and mapped stiffness both present"
    );
}

#[test]
fn eval_rejects_a_checkpoint_from_another_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(EnvKind::Bandit, tmp.path());
    cfg.episodes = 3;
    run_train(&cfg).unwrap();
    let snake = small(EnvKind::Snake, tmp.path());
    let err = run_eval(
        &snake,
        &tmp.path().join("checkpoints/final.json"),
        EvalMode::Composed,
        false,
        tmp.path(),
    );
    assert!(err.is_err());
}

#[test]
fn sweep_partitions_every_seed_and_plot_data_agrees() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(EnvKind::CartPole, &tmp.path().join("sweep"));
    cfg.episodes = 5;
    let seeds = [0, 1, 2];
    let summary = run_sweep(&cfg, &seeds, 2, CARTPOLE_SUCCESS).unwrap();
    assert_eq!(summary.success.len() + summary.failure.len(), seeds.len());
    assert_eq!(
        summary.runs.iter().map(|r| r.seed).collect::<Vec<_>>(),
        seeds
    );
    let curves = fs::read_to_string(cfg.out_dir.join("curves.csv")).unwrap();
    assert!(curves.starts_with("partition,metric,episode,runs,q25,q50,q75"));

    let dirs: Vec<_> = seeds.iter().map(|&s| seed_dir(&cfg.out_dir, s)).collect();
    let plot = plot_data(&dirs, CARTPOLE_SUCCESS, &tmp.path().join("plot")).unwrap();
    assert_eq!(plot.success, summary.success);
    assert_eq!(
        fs::read_to_string(tmp.path().join("plot/curves.csv")).unwrap(),
        curves
    );

    let empty = run_sweep(&cfg, &[], 1, CARTPOLE_SUCCESS).unwrap();
    assert!(empty.runs.is_empty() && empty.success.is_empty() && empty.failure.is_empty());
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 3);
}
