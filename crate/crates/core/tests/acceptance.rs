//! Behavioral acceptance suite: one PASS/FAIL line per criterion.
//!
//! The long training criteria report their outcome without aborting the test
//! run; set `FBFF_STRICT=1` to exit non-zero on any failure. Run artifacts are
//! kept under the cargo target tmp dir for inspection.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use fbff::autodiff::{ParamStore, Tape};
use fbff::envs::{EnvKind, FailureRegion, QuadraticBandit};
use fbff::harness::{
    run_eval, run_sweep, run_train, RunConfig, RunSummary, CARTPOLE_SUCCESS, FF_JUMP_NATS,
};
use fbff::learner::{
    optimality_coeff, total_loss, trajectory_loss, value_loss, Agent, Hyperparams,
};
use fbff::policy::{mixture_ratio, EvalMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Report {
    failed: Vec<&'static str>,
}

impl Report {
    fn record(&mut self, name: &'static str, ok: bool, detail: String) {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed.push(name);
        }
    }
}

fn runs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn gradient_integrity(r: &mut Report) {
    let t0 = Instant::now();
    let report = common::gradient_suite(100, 2024);
    let secs = t0.elapsed().as_secs_f64();
    let (worst_name, worst) = report
        .iter()
        .copied()
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let ok = report.iter().all(|(_, e)| *e <= common::GRAD_TOL) && secs < 60.0;
    r.record(
        "gradient integrity",
        ok,
        format!(
            "{} checks, worst {worst:.2e} ({worst_name}), {secs:.1}s",
            report.len()
        ),
    );
}

fn loss_algebra(r: &mut Report) {
    let mut ok = true;
    let mut notes = Vec::new();
    for tau in [0.5, 1.0, 2.0] {
        let h = 1e-6;
        let slope = (optimality_coeff(h, tau) - optimality_coeff(-h, tau)) / (2.0 * h);
        let floor = optimality_coeff(-50.0 * tau, tau);
        ok &= optimality_coeff(0.0, tau) == 0.0;
        ok &= (slope - 1.0).abs() <= 1e-6;
        ok &= (-tau..=-tau + 1e-6).contains(&floor);
        notes.push(format!(
            "tau {tau}: g'(0)-1 = {:.1e}, g(-50tau)+tau = {:.1e}",
            slope - 1.0,
            floor + tau
        ));
    }
    let store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let [g, lm, lp, v]: [f64; 4] = std::array::from_fn(|_| rng.random_range(-10.0..10.0));
        let tau = rng.random_range(0.1..3.0);
        let mut t = Tape::new(&store);
        let (m, p, vv) = (t.leaf(vec![lm]), t.leaf(vec![lp]), t.leaf(vec![v]));
        let traj = trajectory_loss(&mut t, g, m, p);
        let val = value_loss(&mut t, g, vv);
        let all = total_loss(&mut t, traj, val, m, tau);
        let parts = t.scalar(traj) + t.scalar(val) + tau * t.scalar(m);
        worst = worst.max((t.scalar(all) - parts).abs() / parts.abs().max(1.0));
    }
    ok &= worst <= 4.0 * f64::EPSILON;
    notes.push(format!("total vs parts {worst:.1e}"));
    r.record("loss algebra", ok, notes.join("; "));
}

fn mixture_ratio_law(r: &mut Report) {
    let mut ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let h: f64 = rng.random_range(-20.0..20.0);
        let h2: f64 = rng.random_range(-20.0..20.0);
        let d: f64 = rng.random_range(0.0..10.0);
        ok &= mixture_ratio(h, h, d, 10.0).unwrap() == 0.5;
        ok &= mixture_ratio(h, h2, 0.0, 10.0).unwrap() == 0.5;
    }
    let w = mixture_ratio(1.0, 2.0, 0.1, 10.0).unwrap();
    ok &= (w - 0.73106).abs() <= 1e-5;
    r.record("mixture-ratio law", ok, format!("worked case w = {w:.6}"));
}

fn bandit(r: &mut Report) {
    let t0 = Instant::now();
    let mut finals = Vec::new();
    for seed in 0..5 {
        let mut agent = Agent::new(Hyperparams::default(), 1, 1, seed).unwrap();
        let mut env = QuadraticBandit;
        for _ in 0..2000 {
            agent.train_episode(&mut env, 1, |_| {}).unwrap();
        }
        agent.begin_episode();
        finals.push(agent.act_eval(&[1.0], EvalMode::Composed).unwrap().action[0]);
    }
    let secs = t0.elapsed().as_secs_f64();
    let ok = finals.iter().all(|m| m.abs() < 0.05) && secs < 60.0;
    let shown: Vec<String> = finals.iter().map(|m| format!("{m:+.4}")).collect();
    r.record(
        "bandit sanity",
        ok,
        format!("final means [{}], {secs:.1}s", shown.join(", ")),
    );
}

fn cart_pole(r: &mut Report) -> Vec<RunSummary> {
    let mut cfg = RunConfig::new(EnvKind::CartPole);
    cfg.episodes = 300;
    cfg.out_dir = runs_dir().join("cart-pole");
    let seeds: Vec<u64> = (0..10).collect();
    let sweep = run_sweep(&cfg, &seeds, 1, CARTPOLE_SUCCESS).unwrap();
    let solved: Vec<&RunSummary> = sweep
        .runs
        .iter()
        .filter(|s| sweep.success.contains(&s.seed))
        .collect();
    let w_ok = solved
        .iter()
        .all(|s| s.mean_w_first50 > s.mean_w_last50 && (0.5..=0.95).contains(&s.final_mean_w));
    let slowest = sweep.runs.iter().map(|s| s.seconds).fold(0.0, f64::max);
    let ok = solved.len() >= 6 && w_ok && slowest < 1800.0;
    let medians: Vec<String> = sweep
        .runs
        .iter()
        .map(|s| format!("{:.0}", s.median_last))
        .collect();
    let ws: Vec<String> = solved
        .iter()
        .map(|s| {
            format!(
                "seed {} w {:.2}->{:.2} final {:.2}",
                s.seed, s.mean_w_first50, s.mean_w_last50, s.final_mean_w
            )
        })
        .collect();
    r.record(
        "cart-pole learning",
        ok,
        format!(
            "{}/10 solved, last-20 medians [{}]; {}; slowest seed {slowest:.0}s",
            solved.len(),
            medians.join(" "),
            if ws.is_empty() {
                "no solved seeds".to_string()
            } else {
                ws.join(", ")
            }
        ),
    );
    sweep.runs
}

fn failure_detector(r: &mut Report, runs: &[RunSummary]) {
    let mut collapses = 0;
    let mut silent = Vec::new();
    for s in runs {
        if let Some(c) = s.collapse {
            collapses += 1;
            let from = c.peak_episode.saturating_sub(9);
            if !s.ff_jumps.iter().any(|&e| e >= from) {
                silent.push(s.seed);
            }
        }
    }
    let jumps: usize = runs.iter().map(|s| s.ff_jumps.len()).sum();
    r.record(
        "failure-case detector",
        silent.is_empty(),
        format!(
            "{collapses} collapsed runs, {} silent {silent:?}; {jumps} H_ff jumps > {FF_JUMP_NATS} nats flagged",
            silent.len()
        ),
    );
}

struct SnakeSeed {
    seed: u64,
    transferred: bool,
    cfg: RunConfig,
    ckpt: PathBuf,
}

fn snake(r: &mut Report) -> Vec<SnakeSeed> {
    let mut out = Vec::new();
    let mut notes = Vec::new();
    let mut ff_identical = true;
    for seed in 0..3 {
        let mut cfg = RunConfig::new(EnvKind::Snake);
        cfg.episodes = 100;
        cfg.seed = seed;
        cfg.failure = FailureRegion::LeftOf(0.5 * cfg.snake.field_length);
        cfg.out_dir = runs_dir().join(format!("snake/seed-{seed:03}"));
        run_train(&cfg).unwrap();
        let ckpt = cfg.out_dir.join("checkpoints/final.json");
        let eval = |mode, failure| {
            run_eval(&cfg, &ckpt, mode, failure, &cfg.out_dir.join("eval")).unwrap()
        };
        let (comp, _) = eval(EvalMode::Composed, false);
        let (ff, ff_traj) = eval(EvalMode::FfOnly, false);
        let (ff_fail, ff_fail_traj) = eval(EvalMode::FfOnly, true);
        let strip = |p: &PathBuf| -> Vec<String> {
            // the failure flag column aside, every action and pose is compared bit for bit
            let mut rd = csv::Reader::from_path(p).unwrap();
            let h = rd.headers().unwrap().clone();
            rd.records()
                .map(|rec| {
                    let rec = rec.unwrap();
                    rec.iter()
                        .zip(h.iter())
                        .filter(|(_, name)| !name.starts_with("obs_") && *name != "failing")
                        .map(|(v, _)| v)
                        .collect::<Vec<_>>()
                        .join(",")
                })
                .collect()
        };
        ff_identical &= strip(&ff_traj) == strip(&ff_fail_traj) && ff_fail.failing_steps > 0;
        let (yc, yf) = (comp.final_y.unwrap().abs(), ff.final_y.unwrap().abs());
        let transferred = ff.reached_goal && comp.reached_goal && (yc - yf).abs() <= 0.25;
        notes.push(format!(
            "seed {seed}: ff x {:.2} |y| {yf:.2}, composed x {:.2} |y| {yc:.2}",
            ff.final_x.unwrap(),
            comp.final_x.unwrap()
        ));
        out.push(SnakeSeed {
            seed,
            transferred,
            cfg,
            ckpt,
        });
    }
    let n = out.iter().filter(|s| s.transferred).count();
    r.record(
        "snake skill transfer",
        n >= 1 && ff_identical,
        format!(
            "{n}/3 seeds transfer; FF trajectories identical under failure: {ff_identical}; {}",
            notes.join("; ")
        ),
    );
    out
}

fn fb_sensitivity(r: &mut Report, seeds: &[SnakeSeed]) {
    // judged on the checkpoints that trained successfully, or all of them if none did
    let picked: Vec<&SnakeSeed> = if seeds.iter().any(|s| s.transferred) {
        seeds.iter().filter(|s| s.transferred).collect()
    } else {
        seeds.iter().collect()
    };
    let mut ok = true;
    let mut notes = Vec::new();
    for s in picked {
        let dir = s.cfg.out_dir.join("eval");
        let (clean, _) = run_eval(&s.cfg, &s.ckpt, EvalMode::FbOnly, false, &dir).unwrap();
        let (broken, _) = run_eval(&s.cfg, &s.ckpt, EvalMode::FbOnly, true, &dir).unwrap();
        let (a, b) = (clean.mean_abs_y.unwrap(), broken.mean_abs_y.unwrap());
        ok &= b > a;
        notes.push(format!(
            "seed {}: mean |y| {a:.3} -> {b:.3} with failure",
            s.seed
        ));
    }
    r.record("FB failure sensitivity", ok, notes.join("; "));
}

fn main() {
    // tolerate the test harness's flags (e.g. --nocapture); filtering is not supported
    let mut r = Report { failed: Vec::new() };
    gradient_integrity(&mut r);
    loss_algebra(&mut r);
    mixture_ratio_law(&mut r);
    bandit(&mut r);
    let runs = cart_pole(&mut r);
    failure_detector(&mut r, &runs);
    let snake_seeds = snake(&mut r);
    fb_sensitivity(&mut r, &snake_seeds);
    println!(
        "acceptance: {} failed {:?}; artifacts in {}",
        r.failed.len(),
        r.failed,
        runs_dir().display()
    );
    if std::env::var("FBFF_STRICT").is_ok_and(|v| v == "1") && !r.failed.is_empty() {
        std::process::exit(1);
    }
}
