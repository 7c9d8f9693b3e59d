use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{read_metrics, run_train, write_json, EpisodeRow, HarnessError, RunConfig, RunSummary};

/// Which side of the success threshold a run fell on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Partition {
    All,
    Success,
    Failure,
}

impl std::fmt::Display for Partition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Partition::All => "all",
            Partition::Success => "success",
            Partition::Failure => "failure",
        })
    }
}

/// Quartiles of one metric across runs at one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub partition: Partition,
    pub metric: &'static str,
    pub episode: usize,
    pub runs: usize,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

/// Linear-interpolation quantile of sorted data (the numpy default).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

pub type Metric = fn(&EpisodeRow) -> f64;

pub const CURVE_METRICS: &[(&str, Metric)] = &[
    ("score", |r| r.score),
    ("mean_w", |r| r.mean_w),
    ("mean_d", |r| r.mean_d),
    ("mean_H_fb", |r| r.mean_h_fb),
    ("mean_H_ff", |r| r.mean_h_ff),
];

/// Per-episode quartile curves over the runs; an episode counts only the
/// runs that reached it.
pub fn quantile_curves(partition: Partition, runs: &[&[EpisodeRow]]) -> Vec<CurveRow> {
    let longest = runs.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut out = Vec::new();
    for &(metric, f) in CURVE_METRICS {
        for i in 0..longest {
            let mut xs: Vec<f64> = runs.iter().filter_map(|r| r.get(i)).map(f).collect();
            xs.sort_by(f64::total_cmp);
            out.push(CurveRow {
                partition,
                metric,
                episode: i + 1,
                runs: xs.len(),
                q25: quantile(&xs, 0.25),
                q50: quantile(&xs, 0.5),
                q75: quantile(&xs, 0.75),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub threshold: f64,
    pub runs: Vec<RunSummary>,
    pub success: Vec<u64>,
    pub failure: Vec<u64>,
    /// Seeds that stopped on a non-finite value, with the error.
    pub aborted: Vec<(u64, String)>,
}

/// Splits runs by median last-K score. Aborted runs count as failures.
pub fn partition(runs: &[RunSummary], threshold: f64) -> (Vec<u64>, Vec<u64>) {
    let (s, f): (Vec<&RunSummary>, Vec<&RunSummary>) = runs
        .iter()
        .partition(|r| r.aborted.is_none() && r.median_last >= threshold);
    (
        s.iter().map(|r| r.seed).collect(),
        f.iter().map(|r| r.seed).collect(),
    )
}

fn write_curves(path: &Path, rows: &[CurveRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn curves_for(
    summaries: &[RunSummary],
    rows: &[Vec<EpisodeRow>],
    success: &[u64],
) -> Vec<CurveRow> {
    let all: Vec<&[EpisodeRow]> = rows.iter().map(|r| r.as_slice()).collect();
    let pick = |want: bool| -> Vec<&[EpisodeRow]> {
        summaries
            .iter()
            .zip(rows)
            .filter(|(s, _)| success.contains(&s.seed) == want)
            .map(|(_, r)| r.as_slice())
            .collect()
    };
    let mut curves = quantile_curves(Partition::All, &all);
    curves.extend(quantile_curves(Partition::Success, &pick(true)));
    curves.extend(quantile_curves(Partition::Failure, &pick(false)));
    curves
}

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed:03}"))
}

/// Trains every seed of `template` under `template.out_dir/seed-NNN` on up to
/// `threads` workers, then writes `sweep.json` and `curves.csv`.
pub fn run_sweep(
    template: &RunConfig,
    seeds: &[u64],
    threads: usize,
    threshold: f64,
) -> Result<SweepSummary, HarnessError> {
    let root = template.out_dir.clone();
    std::fs::create_dir_all(&root).map_err(|e| HarnessError::io(&root, e))?;
    let next = AtomicUsize::new(0);
    type Slot = Option<Result<(RunSummary, Vec<EpisodeRow>), HarnessError>>;
    let results: Mutex<Vec<Slot>> = Mutex::new((0..seeds.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1).min(seeds.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&seed) = seeds.get(i) else { break };
                let mut cfg = template.clone();
                cfg.seed = seed;
                cfg.out_dir = seed_dir(&root, seed);
                let res = match run_train(&cfg) {
                    Ok(o) => Ok((o.summary, o.rows)),
                    Err(HarnessError::Diverged { dir, .. }) => load_run(&dir),
                    Err(e) => Err(e),
                };
                results.lock().expect("sweep worker panicked")[i] = Some(res);
            });
        }
    });
    let mut summaries = Vec::new();
    let mut rows = Vec::new();
    for r in results.into_inner().expect("sweep worker panicked") {
        let (s, m) = r.expect("every seed ran")?;
        summaries.push(s);
        rows.push(m);
    }
    let (success, failure) = partition(&summaries, threshold);
    write_curves(
        &root.join("curves.csv"),
        &curves_for(&summaries, &rows, &success),
    )?;
    let summary = SweepSummary {
        threshold,
        aborted: summaries
            .iter()
            .filter_map(|s| s.aborted.clone().map(|e| (s.seed, e)))
            .collect(),
        runs: summaries,
        success,
        failure,
    };
    write_json(&root.join("sweep.json"), &summary)?;
    Ok(summary)
}

/// Summary and metrics of a finished (or aborted) run directory.
pub fn load_run(dir: &Path) -> Result<(RunSummary, Vec<EpisodeRow>), HarnessError> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    let summary: RunSummary = serde_json::from_str(&text)?;
    let rows = read_metrics(&dir.join("metrics.csv"))?;
    Ok((summary, rows))
}

/// Aggregates finished run directories into `curves.csv` and `partition.json`
/// under `out_dir`, for the plotting tools.
pub fn plot_data(
    run_dirs: &[PathBuf],
    threshold: f64,
    out_dir: &Path,
) -> Result<SweepSummary, HarnessError> {
    let mut summaries = Vec::new();
    let mut rows = Vec::new();
    for d in run_dirs {
        let (s, r) = load_run(d)?;
        summaries.push(s);
        rows.push(r);
    }
    let (success, failure) = partition(&summaries, threshold);
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    write_curves(
        &out_dir.join("curves.csv"),
        &curves_for(&summaries, &rows, &success),
    )?;
    let summary = SweepSummary {
        threshold,
        aborted: summaries
            .iter()
            .filter_map(|s| s.aborted.clone().map(|e| (s.seed, e)))
            .collect(),
        runs: summaries,
        success,
        failure,
    };
    write_json(&out_dir.join("partition.json"), &summary)?;
    Ok(summary)
}
