//! Command dispatch: runs every seed, writes artifacts and a manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use gitd_core::approx::InitScheme;
use gitd_core::expected::{run_expected_with_state, ExpectedConfig};
use gitd_core::metrics::{iqm, normalized_auc, normalized_curve, smooth, ScoreTensor};
use gitd_core::sampled::run_control_with_agent;
use serde::Serialize;
use serde_json::json;

use crate::config::{AggregateSpec, ControlSpec, GradcheckSpec, ModeSpec, RunConfig};
use crate::error::CliError;
use crate::formats::{self, Snapshot};

/// `git describe`-style version of this build.
pub fn version() -> &'static str {
    env!("GITD_VERSION")
}

/// Where a command writes when `--out` and the config's `out` are unset.
pub fn default_out_dir(config: &RunConfig, root: Option<&Path>) -> PathBuf {
    let label = match &config.spec {
        ModeSpec::Expected(c) => {
            let mp = if c.mp == gitd_core::expected::MpName::Triangle {
                format!("triangle{:+}", c.epsilon)
            } else {
                c.mp.name().to_string()
            };
            format!("expected-{mp}-{}", c.algorithm.name())
        }
        ModeSpec::Control(c) => format!("control-{}", c.config.algorithm.name()),
        ModeSpec::Aggregate(_) => "aggregate".into(),
        ModeSpec::Gradcheck(_) => "gradcheck".into(),
    };
    root.unwrap_or(Path::new("runs")).join(label)
}

/// Runs `f` for every seed on up to `jobs` threads; results keep seed order.
pub fn for_each_seed<T, F>(seeds: &[u64], jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new(seeds.iter().map(|_| None).collect());
    let workers = jobs.clamp(1, seeds.len().max(1));
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let value = f(seeds[i]);
                slots.lock().expect("no worker panicked")[i] = Some(value);
            });
        }
    });
    slots.into_inner().expect("no worker panicked").into_iter().map(|v| v.expect("every seed ran")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub files: Vec<String>,
    pub diverged: bool,
    #[serde(flatten)]
    pub stats: serde_json::Value,
}

/// Outcome of a command, also written as `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub version: String,
    pub mode: String,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
    pub runs: Vec<RunSummary>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub results: serde_json::Value,
}

/// Runs a resolved config and writes everything under `out`.
pub fn dispatch(config: &RunConfig, out: &Path, jobs: usize) -> Result<Manifest, CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let (runs, results) = match &config.spec {
        ModeSpec::Expected(c) => (expected_runs(c, &config.seeds, out, jobs)?, serde_json::Value::Null),
        ModeSpec::Control(c) => (control_runs(c, &config.seeds, out, jobs)?, serde_json::Value::Null),
        ModeSpec::Aggregate(a) => (Vec::new(), aggregate(a, out)?),
        ModeSpec::Gradcheck(g) => (Vec::new(), gradcheck(g, out)?),
    };
    let manifest = Manifest {
        version: version().to_string(),
        mode: config.mode().name().to_string(),
        seeds: config.seeds.clone(),
        config: config.to_json(),
        runs,
        results,
    };
    let config_path = out.join("config.toml");
    fs::write(&config_path, config.render()).map_err(|e| CliError::io(&config_path, e))?;
    let manifest_path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n";
    fs::write(&manifest_path, text).map_err(|e| CliError::io(&manifest_path, e))?;
    Ok(manifest)
}

/// `random(s)` initialisation is offset by the run seed; the other schemes
/// are deterministic, so all seeds give the same run.
fn seeded(config: &ExpectedConfig, seed: u64) -> ExpectedConfig {
    let mut c = config.clone();
    if let InitScheme::Random(base) = c.init_scheme() {
        c.init = Some(InitScheme::Random(base.wrapping_add(seed)));
    }
    c
}

fn expected_runs(config: &ExpectedConfig, seeds: &[u64], out: &Path, jobs: usize) -> Result<Vec<RunSummary>, CliError> {
    let results = for_each_seed(seeds, jobs, |seed| -> Result<RunSummary, CliError> {
        let c = seeded(config, seed);
        let (trace, state) = run_expected_with_state(&c)?;
        let csv = format!("trace-seed{seed}.csv");
        formats::write_trace(&out.join(&csv), &trace)?;
        let names: Vec<String> = (0..state.params.len()).map(|k| format!("theta{k}")).collect();
        let parts: Vec<(&str, _)> = names.iter().map(String::as_str).zip(&state.params).collect();
        let params = format!("params-seed{seed}.txt");
        formats::write_snapshot(&out.join(&params), &Snapshot::from_sequence(&parts))?;
        let (first, last) = (trace.first().expect("trace has records"), trace.last().expect("trace has records"));
        Ok(RunSummary {
            seed,
            files: vec![csv, params],
            diverged: trace.diverged(),
            stats: json!({
                "records": trace.records.len(),
                "final_step": last.step,
                "initial_value_error": first.value_error,
                "final_value_error": last.value_error,
                "initial_sum_of_bes": first.sum_of_bes,
                "final_sum_of_bes": last.sum_of_bes,
            }),
        })
    });
    results.into_iter().collect()
}

fn control_runs(spec: &ControlSpec, seeds: &[u64], out: &Path, jobs: usize) -> Result<Vec<RunSummary>, CliError> {
    let env = spec.env.build()?;
    let optimal = env.optimal_start_value(spec.config.gamma);
    let results = for_each_seed(seeds, jobs, |seed| -> Result<RunSummary, CliError> {
        let mut c = spec.config.clone();
        c.seed = seed;
        let (trace, agent) = run_control_with_agent(&c, &env)?;
        let episodes = format!("episodes-seed{seed}.csv");
        let losses = format!("losses-seed{seed}.csv");
        let params = format!("params-seed{seed}.txt");
        formats::write_episodes(&out.join(&episodes), &trace)?;
        formats::write_losses(&out.join(&losses), &trace)?;
        formats::write_snapshot(&out.join(&params), &Snapshot::from_params(agent.online()))?;
        Ok(RunSummary {
            seed,
            files: vec![episodes, losses, params],
            diverged: trace.diverged,
            stats: json!({
                "episodes": trace.episodes.len(),
                "env_steps": trace.env_steps,
                "train_steps": trace.train_steps,
                "final_discounted_return": trace.final_discounted_return(0.1),
                "optimal_start_value": optimal,
            }),
        })
    });
    results.into_iter().collect()
}

fn load_group(groups: &[Vec<PathBuf>], column: &str, window: Option<usize>) -> Result<Vec<Vec<formats::Column>>, CliError> {
    groups
        .iter()
        .map(|group| {
            group
                .iter()
                .map(|path| {
                    let mut col = formats::read_column(path, column)?;
                    if let Some(w) = window {
                        col.values = smooth(&col.values, w).map_err(|e| CliError::data(path, e.to_string()))?;
                    }
                    Ok(col)
                })
                .collect()
        })
        .collect()
}

/// Reorders `[env][run]` columns into `[run][env]` curves of equal length.
fn tensor(groups: &[Vec<formats::Column>], what: &str) -> Result<ScoreTensor, CliError> {
    let runs = groups[0].len();
    if groups.iter().any(|g| g.len() != runs) {
        return Err(CliError::config(what, "every environment needs the same number of runs"));
    }
    let curves: Vec<Vec<Vec<f64>>> = (0..runs).map(|i| groups.iter().map(|g| g[i].values.clone()).collect()).collect();
    ScoreTensor::from_curves(&curves)
        .map_err(|_| CliError::config(what, "normalised aggregation needs runs of equal length"))
}

/// Without a baseline: IQM over all runs at each row, skipping non-finite
/// values and rows a run does not reach. With a baseline: the normalised
/// curve plus the normalised AUC.
fn aggregate(spec: &AggregateSpec, out: &Path) -> Result<serde_json::Value, CliError> {
    let inputs = load_group(&spec.inputs, &spec.column, spec.smooth)?;
    let all: Vec<&formats::Column> = inputs.iter().flatten().collect();
    let longest = all.iter().max_by_key(|c| c.values.len()).expect("inputs are non-empty");
    for (c, path) in all.iter().zip(spec.inputs.iter().flatten()) {
        if c.index[..] != longest.index[..c.index.len()] {
            return Err(CliError::data(path, "time index does not line up with the other runs"));
        }
    }
    let index = longest.index.clone();

    let (rows, results) = match &spec.baseline {
        None => {
            let mut rows = Vec::new();
            for (t, &step) in index.iter().enumerate() {
                let pool: Vec<f64> = all.iter().filter_map(|c| c.values.get(t)).copied().filter(|v| v.is_finite()).collect();
                let value = if pool.is_empty() { f64::NAN } else { iqm(&pool)? };
                rows.push((step, value, pool.len()));
            }
            (rows, json!({ "normalized": false }))
        }
        Some(baseline) => {
            let base = load_group(baseline, &spec.column, spec.smooth)?;
            let scores = tensor(&inputs, "aggregate.inputs")?;
            let base_tensor = tensor(&base, "aggregate.baseline")?;
            if scores.n_steps() != base_tensor.n_steps() {
                return Err(CliError::config("aggregate.baseline", "baseline runs must match the input length"));
            }
            let end = base_tensor.end_performance();
            let curve = normalized_curve(&scores, &end)?;
            let area = normalized_auc(&scores, &base_tensor)?;
            let n = scores.n_seeds() * scores.n_envs();
            let rows = index.iter().zip(curve).map(|(&t, v)| (t, v, n)).collect();
            (rows, json!({ "normalized": true, "baseline_end": end, "normalized_auc": area }))
        }
    };
    formats::write_aggregate(&out.join("aggregate.csv"), &rows)?;
    Ok(results)
}

fn gradcheck(spec: &GradcheckSpec, out: &Path) -> Result<serde_json::Value, CliError> {
    let results = crate::gradcheck::run(spec)?;
    let path = out.join("gradcheck.csv");
    let mut text = String::from("suite,cases,max_relative_error,tolerance,pass\n");
    for r in &results {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.suite,
            r.cases,
            formats::fmt_f64(r.max_relative_error),
            formats::fmt_f64(spec.tolerance),
            u8::from(r.passed(spec.tolerance))
        ));
    }
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(json!({
        "tolerance": spec.tolerance,
        "suites": results.iter().map(|r| json!({
            "suite": r.suite,
            "cases": r.cases,
            "max_relative_error": r.max_relative_error,
            "pass": r.passed(spec.tolerance),
        })).collect::<Vec<_>>(),
    }))
}
