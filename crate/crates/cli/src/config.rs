//! Run configuration files.
//!
//! A config is TOML with a top-level `mode`, an optional `seeds` list and
//! `out` directory, and one section named after the mode. Every key of a
//! section is optional and falls back to the library defaults:
//!
//! ```toml
//! mode = "control"
//! seeds = [0, 1, 2, 3, 4]
//!
//! [control]
//! algorithm = "gidqn"
//! k = 5
//! target = { kind = "hard", period = 200 }
//! architecture = { kind = "shared-linear", trunk = [64] }
//!
//! [control.env]
//! grid = "grids/four-rooms.txt"
//! horizon = 200
//! ```

use std::collections::HashSet;
use std::path::PathBuf;

use gitd_core::approx::{Architecture, InitScheme};
use gitd_core::env::{ControlEnv, GridLayout, DEFAULT_GRID, DEFAULT_HORIZON};
use gitd_core::expected::{ExpectedAlgorithm, ExpectedConfig, MpName};
use gitd_core::sampled::{ControlAlgorithm, EpsilonSchedule, OptimizerKind, SampledConfig, TargetUpdate, Utd};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Expected,
    Control,
    Aggregate,
    Gradcheck,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Expected => "expected",
            Mode::Control => "control",
            Mode::Aggregate => "aggregate",
            Mode::Gradcheck => "gradcheck",
        }
    }
}

/// Gridworld for control runs. `grid` (a file) and `layout` (inline text)
/// are exclusive; with neither the built-in grid is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<String>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub slip: f64,
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec {
            grid: None,
            layout: None,
            horizon: DEFAULT_HORIZON,
            slip: 0.0,
        }
    }
}

impl EnvSpec {
    pub fn build(&self) -> Result<ControlEnv, CliError> {
        let layout = match (&self.grid, &self.layout) {
            (Some(_), Some(_)) => return Err(CliError::config("control.env", "set either `grid` or `layout`, not both")),
            (Some(path), None) => crate::formats::load_grid(path)?,
            (None, Some(text)) => {
                GridLayout::parse(text).map_err(|e| CliError::config("control.env.layout", e.to_string()))?
            }
            (None, None) => GridLayout::parse(DEFAULT_GRID).expect("built-in grid parses"),
        };
        ControlEnv::new(layout, self.horizon, self.slip).map_err(|e| CliError::config("control.env", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSpec {
    /// `seed` is replaced by each run's seed.
    pub config: SampledConfig,
    pub env: EnvSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateSpec {
    /// Column to aggregate, e.g. `value_error` or `return`.
    pub column: String,
    /// CSV paths grouped by environment: `inputs[env][run]`.
    pub inputs: Vec<Vec<PathBuf>>,
    /// Baseline runs with the same shape; turns on normalisation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Vec<Vec<PathBuf>>>,
    /// Odd smoothing window applied to each run first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smooth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckSpec {
    #[serde(default = "default_cases")]
    pub cases: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_fd_step")]
    pub step: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_cases() -> usize {
    100
}

fn default_fd_step() -> f64 {
    1e-5
}

fn default_tolerance() -> f64 {
    1e-6
}

impl Default for GradcheckSpec {
    fn default() -> Self {
        GradcheckSpec {
            cases: default_cases(),
            seed: 0,
            step: default_fd_step(),
            tolerance: default_tolerance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModeSpec {
    Expected(ExpectedConfig),
    Control(ControlSpec),
    Aggregate(AggregateSpec),
    Gradcheck(GradcheckSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub spec: ModeSpec,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExpected {
    algorithm: Option<ExpectedAlgorithm>,
    mp: Option<MpName>,
    learning_rate: Option<f64>,
    k: Option<usize>,
    gamma: Option<f64>,
    steps: Option<usize>,
    epsilon: Option<i8>,
    init: Option<InitScheme>,
    shift_period: Option<usize>,
    record_every: Option<usize>,
    halt_on_divergence: Option<bool>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawControl {
    algorithm: Option<ControlAlgorithm>,
    k: Option<usize>,
    beta: Option<f64>,
    target: Option<TargetUpdate>,
    chain_sync_period: Option<usize>,
    utd: Option<Utd>,
    batch_size: Option<usize>,
    lr_theta: Option<f64>,
    lr_z: Option<f64>,
    epsilon: Option<EpsilonSchedule>,
    gamma: Option<f64>,
    buffer_capacity: Option<usize>,
    learning_starts: Option<usize>,
    total_steps: Option<usize>,
    architecture: Option<Architecture>,
    optimizer: Option<OptimizerKind>,
    decoupled_weight_decay: Option<bool>,
    env: Option<EnvSpec>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<Mode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    expected: Option<RawExpected>,
    #[serde(skip_serializing_if = "Option::is_none")]
    control: Option<RawControl>,
    #[serde(skip_serializing_if = "Option::is_none")]
    aggregate: Option<AggregateSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gradcheck: Option<GradcheckSpec>,
}

impl RunConfig {
    pub fn mode(&self) -> Mode {
        match self.spec {
            ModeSpec::Expected(_) => Mode::Expected,
            ModeSpec::Control(_) => Mode::Control,
            ModeSpec::Aggregate(_) => Mode::Aggregate,
            ModeSpec::Gradcheck(_) => Mode::Gradcheck,
        }
    }

    /// Defaults for `mode` (aggregate has no defaults and needs a file).
    pub fn defaults(mode: Mode) -> Result<Self, CliError> {
        parse_config_for(&format!("mode = \"{}\"", mode.name()), Some(mode))
    }

    /// Renders every resolved field, so that parsing the output gives back
    /// an equal config.
    pub fn render(&self) -> String {
        toml::to_string(&self.to_raw()).expect("config renders to TOML")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self.to_raw()).expect("config renders to JSON")
    }

    fn to_raw(&self) -> RawConfig {
        let mut raw = RawConfig {
            mode: Some(self.mode()),
            seeds: Some(self.seeds.clone()),
            out: self.out.clone(),
            ..RawConfig::default()
        };
        match &self.spec {
            ModeSpec::Expected(c) => {
                raw.expected = Some(RawExpected {
                    algorithm: Some(c.algorithm),
                    mp: Some(c.mp),
                    learning_rate: Some(c.learning_rate),
                    k: Some(c.k),
                    gamma: c.gamma,
                    steps: Some(c.steps),
                    epsilon: Some(c.epsilon),
                    init: c.init,
                    shift_period: c.shift_period,
                    record_every: Some(c.record_every),
                    halt_on_divergence: Some(c.halt_on_divergence),
                })
            }
            ModeSpec::Control(ControlSpec { config: c, env }) => {
                raw.control = Some(RawControl {
                    algorithm: Some(c.algorithm),
                    k: Some(c.k),
                    beta: Some(c.beta),
                    target: Some(c.target),
                    chain_sync_period: Some(c.chain_sync_period),
                    utd: Some(c.utd),
                    batch_size: Some(c.batch_size),
                    lr_theta: Some(c.lr_theta),
                    lr_z: c.lr_z,
                    epsilon: Some(c.epsilon),
                    gamma: Some(c.gamma),
                    buffer_capacity: Some(c.buffer_capacity),
                    learning_starts: Some(c.learning_starts),
                    total_steps: Some(c.total_steps),
                    architecture: Some(c.architecture.clone()),
                    optimizer: Some(c.optimizer),
                    decoupled_weight_decay: Some(c.decoupled_weight_decay),
                    env: Some(env.clone()),
                })
            }
            ModeSpec::Aggregate(a) => raw.aggregate = Some(a.clone()),
            ModeSpec::Gradcheck(g) => raw.gradcheck = Some(g.clone()),
        }
        raw
    }
}

/// Parses a config whose `mode` key is required.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    parse_config_for(text, None)
}

/// Parses a config for a subcommand that implies `mode`; a `mode` key in the
/// file must agree with it.
pub fn parse_config_for(text: &str, implied: Option<Mode>) -> Result<RunConfig, CliError> {
    let de = toml::Deserializer::parse(text).map_err(|e| CliError::config("", e.message().to_string()))?;
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { String::new() } else { path };
        CliError::config(&path, e.into_inner().message().to_string())
    })?;
    resolve(raw, implied)
}

fn resolve(raw: RawConfig, implied: Option<Mode>) -> Result<RunConfig, CliError> {
    let mode = match (raw.mode, implied) {
        (Some(m), Some(i)) if m != i => {
            return Err(CliError::config("mode", format!("file says `{}` but the command runs `{}`", m.name(), i.name())))
        }
        (Some(m), _) | (None, Some(m)) => m,
        (None, None) => return Err(CliError::config("mode", "missing")),
    };
    let foreign = [
        ("expected", raw.expected.is_some(), Mode::Expected),
        ("control", raw.control.is_some(), Mode::Control),
        ("aggregate", raw.aggregate.is_some(), Mode::Aggregate),
        ("gradcheck", raw.gradcheck.is_some(), Mode::Gradcheck),
    ];
    for (name, present, owner) in foreign {
        if present && owner != mode {
            return Err(CliError::config(name, format!("section does not apply to mode `{}`", mode.name())));
        }
    }

    let seeds = raw.seeds.unwrap_or_else(|| vec![0]);
    check_seeds(&seeds)?;

    let spec = match mode {
        Mode::Expected => ModeSpec::Expected(resolve_expected(raw.expected.unwrap_or_default())?),
        Mode::Control => ModeSpec::Control(resolve_control(raw.control.unwrap_or_default())?),
        Mode::Aggregate => {
            let a = raw.aggregate.ok_or_else(|| CliError::config("aggregate", "section is required"))?;
            check_aggregate(&a)?;
            ModeSpec::Aggregate(a)
        }
        Mode::Gradcheck => {
            let g = raw.gradcheck.unwrap_or_default();
            if g.cases == 0 {
                return Err(CliError::config("gradcheck.cases", "must be at least 1"));
            }
            if !(g.step > 0.0) {
                return Err(CliError::config("gradcheck.step", format!("must be positive, got {}", g.step)));
            }
            if !(g.tolerance > 0.0) {
                return Err(CliError::config("gradcheck.tolerance", format!("must be positive, got {}", g.tolerance)));
            }
            ModeSpec::Gradcheck(g)
        }
    };
    Ok(RunConfig {
        seeds,
        out: raw.out,
        spec,
    })
}

pub fn check_seeds(seeds: &[u64]) -> Result<(), CliError> {
    if seeds.is_empty() {
        return Err(CliError::config("seeds", "must list at least one seed"));
    }
    let mut seen = HashSet::new();
    for &s in seeds {
        if s > i64::MAX as u64 {
            return Err(CliError::config("seeds", format!("seed {s} exceeds {}", i64::MAX)));
        }
        if !seen.insert(s) {
            return Err(CliError::config("seeds", format!("seed {s} is listed twice")));
        }
    }
    Ok(())
}

fn resolve_expected(r: RawExpected) -> Result<ExpectedConfig, CliError> {
    let mut c = ExpectedConfig::new(r.algorithm.unwrap_or(ExpectedAlgorithm::Gitd), r.mp.unwrap_or(MpName::Star));
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = r.$f { c.$f = v; })* };
    }
    set!(learning_rate, k, steps, epsilon, record_every, halt_on_divergence);
    c.gamma = r.gamma;
    c.init = r.init;
    c.shift_period = r.shift_period;
    c.validate().map_err(|e| CliError::from_core("expected", e))?;
    Ok(c)
}

fn resolve_control(r: RawControl) -> Result<ControlSpec, CliError> {
    let mut c = SampledConfig::new(r.algorithm.unwrap_or(ControlAlgorithm::Gidqn));
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = r.$f { c.$f = v; })* };
    }
    set!(
        k,
        beta,
        target,
        chain_sync_period,
        utd,
        batch_size,
        lr_theta,
        epsilon,
        gamma,
        buffer_capacity,
        learning_starts,
        total_steps,
        architecture,
        optimizer,
        decoupled_weight_decay
    );
    c.lr_z = r.lr_z;
    c.validate().map_err(|e| CliError::from_core("control", e))?;
    let env = r.env.unwrap_or_default();
    if env.grid.is_some() && env.layout.is_some() {
        return Err(CliError::config("control.env", "set either `grid` or `layout`, not both"));
    }
    if env.horizon == 0 {
        return Err(CliError::config("control.env.horizon", "must be at least 1"));
    }
    if !(0.0..=1.0).contains(&env.slip) {
        return Err(CliError::config("control.env.slip", format!("must lie in [0, 1], got {}", env.slip)));
    }
    if let Some(text) = &env.layout {
        GridLayout::parse(text).map_err(|e| CliError::config("control.env.layout", e.to_string()))?;
    }
    Ok(ControlSpec { config: c, env })
}

fn check_aggregate(a: &AggregateSpec) -> Result<(), CliError> {
    if a.column.is_empty() {
        return Err(CliError::config("aggregate.column", "must not be empty"));
    }
    if a.inputs.is_empty() || a.inputs.iter().any(Vec::is_empty) {
        return Err(CliError::config("aggregate.inputs", "needs at least one run per environment"));
    }
    if let Some(b) = &a.baseline {
        if b.len() != a.inputs.len() || b.iter().any(Vec::is_empty) {
            return Err(CliError::config(
                "aggregate.baseline",
                format!("needs one non-empty group per environment ({})", a.inputs.len()),
            ));
        }
    }
    if let Some(w) = a.smooth {
        if w == 0 || w % 2 == 0 {
            return Err(CliError::config("aggregate.smooth", format!("must be a positive odd window, got {w}")));
        }
    }
    Ok(())
}
