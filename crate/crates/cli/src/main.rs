use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gitd_cli::config::check_seeds;
use gitd_cli::run::{default_out_dir, dispatch, version};
use gitd_cli::{parse_config_for, CliError, Mode, ModeSpec, RunConfig};

#[derive(Parser)]
#[command(name = "gitd", version = version(), about = "Run TD-family prediction and control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expected-update runs on the star, hall and triangle processes.
    RunExpected(Common),
    /// Replay-based control runs on a gridworld.
    RunControl(Common),
    /// IQM curves (and normalised AUC) over trace or episode CSVs.
    Aggregate(Common),
    /// Finite-difference checks of the analytic gradients.
    Gradcheck(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $GITD_OUT/<run label>, or runs/<run label>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// A seed count `N` (seeds 0..N) or a comma-separated list.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<SeedList>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Root for default output directories.
    #[arg(long, env = "GITD_OUT", hide_env_values = true)]
    out_root: Option<PathBuf>,
}

#[derive(Clone)]
struct SeedList(Vec<u64>);

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let s = s.trim();
    if !s.contains(',') {
        let n: u64 = s.parse().map_err(|_| format!("`{s}` is not a seed count"))?;
        return Ok(SeedList((0..n).collect()));
    }
    s.split(',')
        .map(|p| p.trim().parse::<u64>().map_err(|_| format!("`{p}` is not a seed")))
        .collect::<Result<_, _>>()
        .map(SeedList)
}

fn load(mode: Mode, args: &Common) -> Result<RunConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            parse_config_for(&text, Some(mode))?
        }
        None => RunConfig::defaults(mode)?,
    };
    if let Some(SeedList(seeds)) = &args.seeds {
        check_seeds(seeds)?;
        config.seeds = seeds.clone();
    }
    Ok(config)
}

fn report(manifest: &gitd_cli::Manifest, out: &std::path::Path) {
    for run in &manifest.runs {
        let stats = run
            .stats
            .as_object()
            .map(|m| m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" "))
            .unwrap_or_default();
        println!("seed {}: diverged={} {stats}", run.seed, run.diverged);
    }
    if !manifest.results.is_null() {
        println!("{}", serde_json::to_string_pretty(&manifest.results).expect("results serialise"));
    }
    println!("wrote {}", out.display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = match &cli.command {
        Command::RunExpected(a) => (Mode::Expected, a),
        Command::RunControl(a) => (Mode::Control, a),
        Command::Aggregate(a) => (Mode::Aggregate, a),
        Command::Gradcheck(a) => (Mode::Gradcheck, a),
    };
    let result = load(mode, args).and_then(|config| {
        let out = args
            .out
            .clone()
            .or_else(|| config.out.clone())
            .unwrap_or_else(|| default_out_dir(&config, args.out_root.as_deref()));
        let jobs = args
            .jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let manifest = dispatch(&config, &out, jobs)?;
        report(&manifest, &out);
        if let ModeSpec::Gradcheck(g) = &config.spec {
            let failed = manifest.results["suites"]
                .as_array()
                .map_or(0, |s| s.iter().filter(|r| r["pass"] == false).count());
            if failed > 0 {
                eprintln!("{failed} gradient suite(s) above tolerance {}", g.tolerance);
            }
        }
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
