use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use gitd_cli::config::{AggregateSpec, GradcheckSpec};
use gitd_cli::formats::read_column;
use gitd_cli::run::for_each_seed;
use gitd_cli::{dispatch, parse_config, parse_config_for, Mode, ModeSpec, RunConfig};

const STAR_GITD: &str = r#"
mode = "expected"
[expected]
algorithm = "gitd"
mp = "star"
steps = 20000
record_every = 100
"#;

const SMALL_CONTROL: &str = r#"
mode = "control"
seeds = [0, 1, 2]
[control]
algorithm = "gidqn"
k = 3
total_steps = 3000
learning_starts = 200
architecture = { kind = "shared-linear", trunk = [16] }
"#;

fn files(dir: &Path, suffix: &str) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(suffix))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn star_gitd_lowers_the_sum_of_bellman_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = parse_config(STAR_GITD).unwrap();
    let manifest = dispatch(&config, dir.path(), 1).unwrap();
    assert_eq!(manifest.runs.len(), 1);
    let sbe = read_column(&dir.path().join("trace-seed0.csv"), "sum_of_bes").unwrap();
    assert_eq!(sbe.index.last().copied(), Some(20000.0));
    assert!(sbe.values.last().unwrap() < &sbe.values[0]);
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let config = parse_config(SMALL_CONTROL).unwrap();
    dispatch(&config, a.path(), 1).unwrap();
    dispatch(&config, b.path(), 3).unwrap();
    let csv_a = files(a.path(), ".csv");
    assert_eq!(csv_a.len(), 6);
    assert_eq!(csv_a, files(b.path(), ".csv"));
    assert_eq!(files(a.path(), ".txt"), files(b.path(), ".txt"));
    // seeds really differ
    assert_ne!(csv_a[0].1, csv_a[1].1);
}

#[test]
fn manifest_reproduces_the_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let config = parse_config(SMALL_CONTROL).unwrap();
    let manifest = dispatch(&config, a.path(), 2).unwrap();
    assert_eq!(manifest.seeds, vec![0, 1, 2]);
    assert!(manifest.version.starts_with('v'));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["control"]["k"], 3);
    assert_eq!(json["runs"].as_array().unwrap().len(), 3);

    let echoed = fs::read_to_string(a.path().join("config.toml")).unwrap();
    let again = parse_config(&echoed).unwrap();
    assert_eq!(again, config);
    dispatch(&again, b.path(), 1).unwrap();
    assert_eq!(files(a.path(), ".csv"), files(b.path(), ".csv"));
}

#[test]
fn gradcheck_reports_small_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig::defaults(Mode::Gradcheck).unwrap();
    let manifest = dispatch(&config, dir.path(), 1).unwrap();
    let suites = manifest.results["suites"].as_array().unwrap();
    assert_eq!(suites.len(), 3);
    for s in suites {
        assert_eq!(s["cases"], 100);
        assert!(s["max_relative_error"].as_f64().unwrap() <= 1e-6, "{s}");
    }
    let csv = fs::read_to_string(dir.path().join("gradcheck.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",1")));
}

fn write_runs(dir: &Path, name: &str, curves: &[Vec<f64>]) -> Vec<PathBuf> {
    curves
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let path = dir.join(format!("{name}{i}.csv"));
            let mut text = String::from("step,score\n");
            for (t, v) in c.iter().enumerate() {
                text.push_str(&format!("{},{v}\n", t * 10));
            }
            fs::write(&path, text).unwrap();
            path
        })
        .collect()
}

/// Trimmed mean with every value repeated four times, so the 25% cut
/// removes whole entries.
fn oracle_iqm(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().flat_map(|&x| [x; 4]).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    v[n..3 * n].iter().sum::<f64>() / (2 * n) as f64
}

#[test]
fn normalised_aggregation_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let curve = |seed: usize, env: usize, scale: f64| -> Vec<f64> {
        (0..6).map(|t| scale * (1.0 + (seed * 7 + env * 3 + t) as f64 % 5.0)).collect()
    };
    let mut inputs = Vec::new();
    let mut baseline = Vec::new();
    let mut raw = Vec::new();
    let mut base_raw = Vec::new();
    for env in 0..2 {
        let s: Vec<Vec<f64>> = (0..4).map(|i| curve(i, env, 1.5)).collect();
        let b: Vec<Vec<f64>> = (0..4).map(|i| curve(i + 1, env, 1.0)).collect();
        inputs.push(write_runs(dir.path(), &format!("s{env}_"), &s));
        baseline.push(write_runs(dir.path(), &format!("b{env}_"), &b));
        raw.push(s);
        base_raw.push(b);
    }
    let config = RunConfig {
        seeds: vec![0],
        out: None,
        spec: ModeSpec::Aggregate(AggregateSpec {
            column: "score".into(),
            inputs,
            baseline: Some(baseline),
            smooth: None,
        }),
    };
    let out = dir.path().join("agg");
    let manifest = dispatch(&config, &out, 1).unwrap();

    let end: Vec<f64> = base_raw.iter().map(|b| b.iter().map(|c| c[5]).sum::<f64>() / 4.0).collect();
    let iqm_col = read_column(&out.join("aggregate.csv"), "iqm").unwrap();
    let n_runs = read_column(&out.join("aggregate.csv"), "n_runs").unwrap();
    assert_eq!(iqm_col.index, vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0]);
    for t in 0..6 {
        let pool: Vec<f64> = (0..2).flat_map(|j| (0..4).map(move |i| (i, j))).map(|(i, j)| raw[j][i][t] / end[j]).collect();
        assert!((iqm_col.values[t] - oracle_iqm(&pool)).abs() <= 1e-12);
        assert_eq!(n_runs.values[t], 8.0);
    }
    let area = |x: &Vec<Vec<Vec<f64>>>| {
        let sums: Vec<f64> = (0..2)
            .flat_map(|j| (0..4).map(move |i| (i, j)))
            .map(|(i, j)| x[j][i].iter().map(|v| v / end[j]).sum())
            .collect();
        oracle_iqm(&sums)
    };
    let want = area(&raw) / area(&base_raw);
    let got = manifest.results["normalized_auc"].as_f64().unwrap();
    assert!((got - want).abs() <= 1e-12 * want);
}

#[test]
fn plain_aggregation_handles_ragged_runs() {
    let dir = tempfile::tempdir().unwrap();
    let runs = write_runs(dir.path(), "r", &[vec![1.0, 2.0, 3.0], vec![3.0, f64::NAN], vec![5.0, 6.0, 7.0]]);
    let config = RunConfig {
        seeds: vec![0],
        out: None,
        spec: ModeSpec::Aggregate(AggregateSpec {
            column: "score".into(),
            inputs: vec![runs],
            baseline: None,
            smooth: None,
        }),
    };
    let out = dir.path().join("agg");
    dispatch(&config, &out, 1).unwrap();
    let text = fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert_eq!(text, "timestep,iqm,n_runs\n0,3,3\n10,4,2\n20,5,2\n");
}

#[test]
fn seeds_run_in_order_on_any_thread_count() {
    let seeds: Vec<u64> = (0..17).rev().collect();
    for jobs in [1, 2, 5, 64] {
        assert_eq!(for_each_seed(&seeds, jobs, |s| s * s), seeds.iter().map(|s| s * s).collect::<Vec<_>>());
    }
}

fn gitd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gitd"))
}

#[test]
fn binary_exit_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[control]\nk = 0\n").unwrap();
    let out = gitd().args(["run-control", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("control.k"));

    let out = gitd().args(["run-expected", "--config"]).arg(dir.path().join("missing.toml")).output().unwrap();
    assert_eq!(out.status.code(), Some(3));

    let out = gitd().args(["run-expected", "--seeds", "1,1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // divergence is data, not an error
    let td = dir.path().join("td.toml");
    fs::write(&td, "[expected]\nalgorithm = \"td\"\nmp = \"star\"\nsteps = 2000\n").unwrap();
    let out = gitd()
        .args(["run-expected", "--seeds", "2", "--config"])
        .arg(&td)
        .env("GITD_OUT", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = dir.path().join("expected-star-td");
    for seed in 0..2 {
        let flags = read_column(&run_dir.join(format!("trace-seed{seed}.csv")), "diverged").unwrap().values;
        assert_eq!(flags.last(), Some(&1.0));
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["runs"][0]["diverged"], true);
}

#[test]
fn out_flag_wins_over_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    let target = dir.path().join("from-config");
    fs::write(&cfg, format!("out = {:?}\n[expected]\nmp = \"hall\"\nsteps = 10\n", target.to_str().unwrap())).unwrap();
    let out = gitd().args(["run-expected", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success());
    assert!(target.join("trace-seed0.csv").exists());
    let flag = dir.path().join("from-flag");
    let out = gitd().args(["run-expected", "--config"]).arg(&cfg).arg("--out").arg(&flag).output().unwrap();
    assert!(out.status.success());
    assert!(flag.join("manifest.json").exists());
    let parsed = parse_config_for(&fs::read_to_string(flag.join("config.toml")).unwrap(), Some(Mode::Expected)).unwrap();
    assert_eq!(parsed.out.as_deref(), Some(target.as_path()));
}

#[test]
fn gradcheck_binary_accepts_a_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("g.toml");
    fs::write(&cfg, "[gradcheck]\ncases = 5\nseed = 9\n").unwrap();
    let out = gitd().args(["gradcheck", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("max_relative_error"), "{stdout}");
    let parsed = parse_config(&fs::read_to_string(dir.path().join("o/config.toml")).unwrap()).unwrap();
    assert_eq!(parsed.spec, ModeSpec::Gradcheck(GradcheckSpec { cases: 5, seed: 9, ..GradcheckSpec::default() }));
}
