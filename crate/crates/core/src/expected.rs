//! Exact, synchronous expected updates for prediction.
//!
//! A run keeps a chain of parameter vectors `θ0..θK`. Function `k` is
//! pulled toward the Bellman iteration of function `k-1`, with state
//! weighting `d(s) = 1/n`. Per step:
//!
//! * `td`: one function; its target is a copy refreshed every step.
//! * `tdrc-residual`: one function, full gradient of `½ Σ d (ΓV − V)²`.
//! * `itd`: every `θk` (k ≥ 1) takes a semi-gradient step toward `ΓV_{k−1}`
//!   evaluated before the step; `θ0` is frozen.
//! * `gitd`: joint gradient step on `½ Σ_k Σ_s d(s) (ΓV_{k−1} − V_k)²(s)`
//!   over `θ1..θK`; `θ0` is frozen.
//!
//! `itd` and `gitd` optionally shift the chain (`θk ← θ_{k+1}`, `θK`
//! retained) every `shift_period` steps.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::approx::{init_params, InitScheme, LinearApprox, ParamVector, SpiralApprox, ValueModel};
use crate::error::{check_len, Error, Result};
use crate::mdp::{hall_mp, FeatureMap, star_mp, uniform_weights, BellmanOperator, TabularMP, TriangleGeometry, TriangleOperator};
use crate::math;

/// Parameters with any magnitude above this are treated as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ExpectedAlgorithm {
    Td,
    TdrcResidual,
    Itd,
    Gitd,
}

impl ExpectedAlgorithm {
    pub const ALL: [ExpectedAlgorithm; 4] = [Self::Td, Self::TdrcResidual, Self::Itd, Self::Gitd];

    pub fn name(self) -> &'static str {
        match self {
            Self::Td => "td",
            Self::TdrcResidual => "tdrc-residual",
            Self::Itd => "itd",
            Self::Gitd => "gitd",
        }
    }

    fn single_function(self) -> bool {
        matches!(self, Self::Td | Self::TdrcResidual)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum MpName {
    Star,
    Hall,
    Triangle,
}

impl MpName {
    pub fn name(self) -> &'static str {
        match self {
            Self::Star => "star",
            Self::Hall => "hall",
            Self::Triangle => "triangle",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExpectedConfig {
    pub algorithm: ExpectedAlgorithm,
    pub mp: MpName,
    pub learning_rate: f64,
    /// Chain length; `td` and `tdrc-residual` always use one function.
    pub k: usize,
    /// Overrides the discount of the tabular processes. The triangle
    /// operator has no discount and ignores it.
    pub gamma: Option<f64>,
    pub steps: usize,
    /// Rotation direction for the triangle process.
    pub epsilon: i8,
    /// `None` picks the process default (`star-baird`, `constant(1)`,
    /// `constant(14)`).
    pub init: Option<InitScheme>,
    /// Chain shift period for `itd`/`gitd`; `None` never shifts.
    pub shift_period: Option<usize>,
    /// Record every n-th step (the final state is always recorded).
    pub record_every: usize,
    pub halt_on_divergence: bool,
}

impl ExpectedConfig {
    /// Defaults for each process: learning rate 0.08 and K = 300 on star and
    /// hall, 0.002 and K = 10 on the triangle.
    pub fn new(algorithm: ExpectedAlgorithm, mp: MpName) -> Self {
        let (learning_rate, k, steps) = match mp {
            MpName::Star => (0.08, 300, 1_500_000),
            MpName::Hall => (0.08, 300, 60_000),
            MpName::Triangle => (0.002, 10, 40_000),
        };
        ExpectedConfig {
            algorithm,
            mp,
            learning_rate,
            k,
            gamma: None,
            steps,
            epsilon: -1,
            init: None,
            shift_period: None,
            record_every: 1,
            halt_on_divergence: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate", format!("must be positive, got {}", self.learning_rate)));
        }
        if self.k == 0 {
            return Err(Error::config("k", "must be at least 1"));
        }
        if self.steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        if let Some(g) = self.gamma {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::config("gamma", format!("must lie in [0, 1), got {g}")));
            }
        }
        if self.epsilon != 1 && self.epsilon != -1 {
            return Err(Error::config("epsilon", format!("must be -1 or 1, got {}", self.epsilon)));
        }
        if self.shift_period == Some(0) {
            return Err(Error::config("shift_period", "must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(Error::config("record_every", "must be at least 1"));
        }
        Ok(())
    }

    pub fn effective_k(&self) -> usize {
        if self.algorithm.single_function() {
            1
        } else {
            self.k
        }
    }

    pub fn effective_shift_period(&self) -> Option<usize> {
        if self.algorithm.single_function() {
            Some(1)
        } else {
            self.shift_period
        }
    }

    pub fn init_scheme(&self) -> InitScheme {
        self.init.unwrap_or(match self.mp {
            MpName::Star => InitScheme::StarBaird,
            MpName::Hall => InitScheme::Constant(1.0),
            MpName::Triangle => InitScheme::Constant(14.0),
        })
    }
}

/// A prediction problem: exact operator plus value model. The true value
/// function is zero for all provided problems.
#[derive(Debug, Clone)]
pub enum ExpectedProblem {
    Linear { mp: TabularMP, model: LinearApprox },
    Triangle { op: TriangleOperator, model: SpiralApprox },
}

impl ExpectedProblem {
    pub fn star() -> Self {
        let (mp, fm) = star_mp();
        ExpectedProblem::Linear {
            mp,
            model: LinearApprox::new(fm),
        }
    }

    pub fn hall() -> Self {
        let (mp, fm) = hall_mp();
        ExpectedProblem::Linear {
            mp,
            model: LinearApprox::new(fm),
        }
    }

    pub fn triangle(epsilon: i8) -> Result<Self> {
        Ok(ExpectedProblem::Triangle {
            op: TriangleOperator::new(),
            model: SpiralApprox::new(TriangleGeometry::new(epsilon)?),
        })
    }

    pub fn from_config(config: &ExpectedConfig) -> Result<Self> {
        let mut problem = match config.mp {
            MpName::Star => Self::star(),
            MpName::Hall => Self::hall(),
            MpName::Triangle => Self::triangle(config.epsilon)?,
        };
        if let (Some(g), ExpectedProblem::Linear { mp, .. }) = (config.gamma, &mut problem) {
            *mp = mp.with_gamma(g)?;
        }
        Ok(problem)
    }

    pub fn layout(&self) -> crate::approx::Layout {
        match self {
            ExpectedProblem::Linear { model, .. } => ValueModel::layout(model),
            ExpectedProblem::Triangle { model, .. } => ValueModel::layout(model),
        }
    }

    pub fn n_states(&self) -> usize {
        match self {
            ExpectedProblem::Linear { mp, .. } => mp.n_states(),
            ExpectedProblem::Triangle { .. } => 3,
        }
    }

    /// Value vector of one parameter vector.
    pub fn values(&self, params: &ParamVector) -> Result<Vec<f64>> {
        check_len(self.layout().len(), params.len())?;
        let mut out = vec![0.0; self.n_states()];
        match self {
            ExpectedProblem::Linear { model, .. } => model.values(params.values(), &mut out),
            ExpectedProblem::Triangle { model, .. } => model.values(params.values(), &mut out),
        }
        Ok(out)
    }

    /// Exact Bellman iteration of a value vector.
    pub fn bellman(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_states(), v.len())?;
        let mut out = vec![0.0; v.len()];
        match self {
            ExpectedProblem::Linear { mp, .. } => mp.apply(v, &mut out),
            ExpectedProblem::Triangle { op, .. } => op.apply(v, &mut out),
        }
        Ok(out)
    }

    pub fn initial_params(&self, scheme: InitScheme) -> Result<ParamVector> {
        init_params(&self.layout(), scheme)
    }
}

/// The chain `θ0..θK`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceState {
    pub params: Vec<ParamVector>,
}

impl SequenceState {
    /// `K + 1` copies of `init`.
    pub fn uniform(init: ParamVector, k: usize) -> Self {
        SequenceState {
            params: vec![init; k + 1],
        }
    }

    pub fn k(&self) -> usize {
        self.params.len() - 1
    }

    /// `θk ← θ_{k+1}` for `k < K`; `θK` keeps its value.
    pub fn shift(&mut self) {
        let k = self.k();
        for i in 0..k {
            let next = self.params[i + 1].clone();
            self.params[i] = next;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub value_error: f64,
    pub sum_of_bes: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceSeries {
    pub records: Vec<TraceRecord>,
}

impl TraceSeries {
    pub fn diverged(&self) -> bool {
        self.records.last().is_some_and(|r| r.diverged)
    }

    pub fn first(&self) -> Option<&TraceRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// First recorded step whose value error is at most `fraction` of the
    /// initial value error.
    pub fn steps_to_fraction(&self, fraction: f64) -> Option<usize> {
        let initial = self.first()?.value_error;
        self.records
            .iter()
            .find(|r| !r.diverged && r.value_error <= fraction * initial)
            .map(|r| r.step)
    }

    /// Largest value error seen over the run (non-finite counts as infinite).
    pub fn max_value_error(&self) -> f64 {
        self.records.iter().fold(0.0, |m, r| {
            if r.value_error.is_finite() {
                m.max(r.value_error)
            } else {
                f64::INFINITY
            }
        })
    }
}

/// Workspace for one chain on one problem.
struct Engine<'a, O: BellmanOperator, M: ValueModel> {
    op: &'a O,
    model: &'a M,
    d: Vec<f64>,
    values: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    resid: Vec<Vec<f64>>,
    cot: Vec<f64>,
    weighted: Vec<f64>,
    adj: Vec<f64>,
    grad: Vec<f64>,
}

impl<'a, O: BellmanOperator, M: ValueModel> Engine<'a, O, M> {
    fn new(op: &'a O, model: &'a M, k: usize) -> Self {
        let n = op.n_states();
        let p = model.layout().len();
        Engine {
            op,
            model,
            d: uniform_weights(n),
            values: vec![vec![0.0; n]; k + 1],
            targets: vec![vec![0.0; n]; k + 1],
            resid: vec![vec![0.0; n]; k + 1],
            cot: vec![0.0; n],
            weighted: vec![0.0; n],
            adj: vec![0.0; n],
            grad: vec![0.0; p],
        }
    }

    /// Fills values, Bellman targets and residuals `r_k = ΓV_{k−1} − V_k`;
    /// returns `(value_error, sum_of_bes)`.
    fn evaluate(&mut self, params: &[Vec<f64>]) -> (f64, f64) {
        let k = params.len() - 1;
        for (i, p) in params.iter().enumerate() {
            self.model.values(p, &mut self.values[i]);
            if i < k {
                self.op.apply(&self.values[i], &mut self.targets[i]);
            }
        }
        let mut sbe = 0.0;
        for i in 1..=k {
            let (t, v, r) = (&self.targets[i - 1], &self.values[i], &mut self.resid[i]);
            for s in 0..r.len() {
                r[s] = t[s] - v[s];
                sbe += r[s] * r[s];
            }
        }
        (math::norm2(&self.values[k]), sbe)
    }

    /// Fills `self.cot` with the output cotangent for `θi`; the update
    /// direction is then `Jᵀ cot`.
    fn cotangent(&mut self, i: usize, k: usize, algorithm: ExpectedAlgorithm) {
        for s in 0..self.cot.len() {
            self.cot[s] = -self.d[s] * self.resid[i][s];
        }
        let through_target = match algorithm {
            ExpectedAlgorithm::Gitd if i < k => Some(i + 1),
            ExpectedAlgorithm::TdrcResidual => Some(i),
            _ => None,
        };
        if let Some(j) = through_target {
            for s in 0..self.weighted.len() {
                self.weighted[s] = self.d[s] * self.resid[j][s];
            }
            self.op.apply_adjoint(&self.weighted, &mut self.adj);
            for s in 0..self.cot.len() {
                self.cot[s] += self.adj[s];
            }
        }
    }

    fn gradient(&mut self, params: &[Vec<f64>], i: usize, algorithm: ExpectedAlgorithm) -> &[f64] {
        self.cotangent(i, params.len() - 1, algorithm);
        self.model.values_vjp(&params[i], &self.cot, &mut self.grad);
        &self.grad
    }

    fn step(&mut self, params: &mut [Vec<f64>], algorithm: ExpectedAlgorithm, lr: f64) {
        // Residuals come from `evaluate` on the pre-step chain and each
        // gradient only reads its own θk, so updating in place is synchronous.
        let k = params.len() - 1;
        for i in 1..=k {
            self.cotangent(i, k, algorithm);
            self.model.values_vjp(&params[i], &self.cot, &mut self.grad);
            for (w, g) in params[i].iter_mut().zip(&self.grad) {
                *w -= lr * g;
            }
        }
    }
}

/// Batched engine for linear models on tabular processes. Parameters are
/// stored as `[feature][k]` so every operation is a loop over the chain.
struct LinearChain<'a> {
    mp: &'a TabularMP,
    features: &'a FeatureMap,
    w: usize,
    th: Vec<f64>,
    v: Vec<f64>,
    t: Vec<f64>,
    r: Vec<f64>,
    q: Vec<f64>,
    c: Vec<f64>,
    g: Vec<f64>,
    d: Vec<f64>,
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

impl<'a> LinearChain<'a> {
    fn new(mp: &'a TabularMP, model: &'a LinearApprox, params: &[Vec<f64>]) -> Self {
        let features = model.features();
        let (n, p, w) = (mp.n_states(), features.dim(), params.len());
        let mut th = vec![0.0; p * w];
        for (k, pk) in params.iter().enumerate() {
            for j in 0..p {
                th[j * w + k] = pk[j];
            }
        }
        LinearChain {
            mp,
            features,
            w,
            th,
            v: vec![0.0; n * w],
            t: vec![0.0; n * w],
            r: vec![0.0; n * w],
            q: vec![0.0; n * w],
            c: vec![0.0; n * w],
            g: vec![0.0; p * w],
            d: uniform_weights(n),
        }
    }

    fn store(&self, params: &mut [Vec<f64>]) {
        let w = self.w;
        for (k, pk) in params.iter_mut().enumerate() {
            for (j, x) in pk.iter_mut().enumerate() {
                *x = self.th[j * w + k];
            }
        }
    }
}

impl Chain for LinearChain<'_> {
    fn evaluate(&mut self) -> (f64, f64) {
        let w = self.w;
        self.v.iter_mut().for_each(|x| *x = 0.0);
        for &(s, j, phi) in self.features.entries() {
            axpy(&mut self.v[s * w..(s + 1) * w], phi, &self.th[j * w..(j + 1) * w]);
        }
        for (s, &rbar) in self.mp.expected_rewards().iter().enumerate() {
            self.t[s * w..(s + 1) * w].iter_mut().for_each(|x| *x = rbar);
        }
        for &(s, u, gp) in self.mp.scaled_kernel() {
            axpy(&mut self.t[s * w..(s + 1) * w], gp, &self.v[u * w..(u + 1) * w]);
        }
        let mut sbe = 0.0;
        let mut ve = 0.0;
        for s in 0..self.d.len() {
            let row = s * w..(s + 1) * w;
            let (t, v, r) = (&self.t[row.clone()], &self.v[row.clone()], &mut self.r[row]);
            for k in 1..w {
                r[k] = t[k - 1] - v[k];
                sbe += r[k] * r[k];
            }
            ve += v[w - 1] * v[w - 1];
        }
        (math::sqrt(ve), sbe)
    }

    fn step(&mut self, algorithm: ExpectedAlgorithm, lr: f64) {
        let w = self.w;
        for (s, &ds) in self.d.iter().enumerate() {
            let row = s * w..(s + 1) * w;
            for ((q, c), r) in self.q[row.clone()].iter_mut().zip(&mut self.c[row.clone()]).zip(&self.r[row]) {
                *q = ds * r;
                *c = -*q;
            }
        }
        match algorithm {
            ExpectedAlgorithm::Gitd => {
                for &(a, b, gp) in self.mp.scaled_kernel() {
                    axpy(&mut self.c[b * w + 1..b * w + w - 1], gp, &self.q[a * w + 2..a * w + w]);
                }
            }
            ExpectedAlgorithm::TdrcResidual => {
                for &(a, b, gp) in self.mp.scaled_kernel() {
                    axpy(&mut self.c[b * w + 1..(b + 1) * w], gp, &self.q[a * w + 1..(a + 1) * w]);
                }
            }
            ExpectedAlgorithm::Td | ExpectedAlgorithm::Itd => {}
        }
        self.g.iter_mut().for_each(|x| *x = 0.0);
        for &(s, j, phi) in self.features.entries() {
            axpy(&mut self.g[j * w + 1..(j + 1) * w], phi, &self.c[s * w + 1..(s + 1) * w]);
        }
        for (th, g) in self.th.chunks_exact_mut(w).zip(self.g.chunks_exact(w)) {
            axpy(&mut th[1..], -lr, &g[1..]);
        }
    }

    fn shift(&mut self) {
        let w = self.w;
        for row in self.th.chunks_exact_mut(w) {
            row.copy_within(1..w, 0);
        }
    }

    fn diverged(&self) -> bool {
        diverged_values(&self.th)
    }
}

/// Generic engine paired with its parameters.
struct GenericChain<'a, O: BellmanOperator, M: ValueModel> {
    engine: Engine<'a, O, M>,
    params: Vec<Vec<f64>>,
}

impl<O: BellmanOperator, M: ValueModel> Chain for GenericChain<'_, O, M> {
    fn evaluate(&mut self) -> (f64, f64) {
        self.engine.evaluate(&self.params)
    }

    fn step(&mut self, algorithm: ExpectedAlgorithm, lr: f64) {
        self.engine.step(&mut self.params, algorithm, lr);
    }

    fn shift(&mut self) {
        for i in 0..self.params.len() - 1 {
            let (lo, hi) = self.params.split_at_mut(i + 1);
            lo[i].copy_from_slice(&hi[0]);
        }
    }

    fn diverged(&self) -> bool {
        self.params.iter().any(|p| diverged_values(p))
    }
}

trait Chain {
    /// `(value_error, sum_of_bes)` of the current chain; also prepares the
    /// residuals used by the next `step`.
    fn evaluate(&mut self) -> (f64, f64);
    fn step(&mut self, algorithm: ExpectedAlgorithm, lr: f64);
    fn shift(&mut self);
    fn diverged(&self) -> bool;
}

fn run_chain<C: Chain>(chain: &mut C, config: &ExpectedConfig) -> TraceSeries {
    let shift = config.effective_shift_period();
    let mut records = Vec::with_capacity(config.steps / config.record_every + 2);
    let mut flagged = false;
    for t in 0..=config.steps {
        let (ve, sbe) = chain.evaluate();
        let done = t == config.steps || (flagged && config.halt_on_divergence);
        if t % config.record_every == 0 || done {
            records.push(TraceRecord {
                step: t,
                value_error: ve,
                sum_of_bes: sbe,
                diverged: flagged,
            });
        }
        if done {
            break;
        }
        chain.step(config.algorithm, config.learning_rate);
        if shift.is_some_and(|period| (t + 1) % period == 0) {
            chain.shift();
        }
        flagged = flagged || chain.diverged();
    }
    TraceSeries { records }
}

fn diverged_values(values: &[f64]) -> bool {
    values.iter().any(|x| !x.is_finite() || math::abs(*x) > DIVERGENCE_THRESHOLD)
}

fn raw(state: &SequenceState) -> Vec<Vec<f64>> {
    state.params.iter().map(|p| p.values().to_vec()).collect()
}

fn check_state(state: &SequenceState, problem: &ExpectedProblem) -> Result<()> {
    if state.params.len() < 2 {
        return Err(Error::arg("a sequence needs at least θ0 and θ1"));
    }
    let len = problem.layout().len();
    for p in &state.params {
        check_len(len, p.len())?;
    }
    Ok(())
}

macro_rules! with_engine {
    ($problem:expr, $k:expr, |$e:ident| $body:expr) => {
        match $problem {
            ExpectedProblem::Linear { mp, model } => {
                let mut $e = Engine::new(mp, model, $k);
                $body
            }
            ExpectedProblem::Triangle { op, model } => {
                let mut $e = Engine::new(op, model, $k);
                $body
            }
        }
    };
}

/// Euclidean distance between `V_K` and the true (zero) value function.
pub fn value_error(state: &SequenceState, problem: &ExpectedProblem) -> Result<f64> {
    check_state(state, problem)?;
    let last = state.params.last().unwrap();
    Ok(math::norm2(&problem.values(last)?))
}

/// `Σ_{k=1..K} ‖ΓV_{k−1} − V_k‖²`.
pub fn sum_of_bellman_errors(state: &SequenceState, problem: &ExpectedProblem) -> Result<f64> {
    check_state(state, problem)?;
    let params = raw(state);
    Ok(with_engine!(problem, state.k(), |e| e.evaluate(&params).1))
}

/// Update direction for each of `θ1..θK` (the step is `θk −= lr·Δk`).
/// For `gitd` this is the gradient of `½ Σ_k Σ_s d(s) (ΓV_{k−1} − V_k)²`.
pub fn expected_gradients(
    state: &SequenceState,
    algorithm: ExpectedAlgorithm,
    problem: &ExpectedProblem,
) -> Result<Vec<ParamVector>> {
    check_state(state, problem)?;
    let params = raw(state);
    let layout = problem.layout();
    let mut out = Vec::with_capacity(state.k());
    with_engine!(problem, state.k(), |e| {
        e.evaluate(&params);
        for i in 1..=state.k() {
            let g = e.gradient(&params, i, algorithm).to_vec();
            out.push(ParamVector::from_values(layout.clone(), g)?);
        }
    });
    Ok(out)
}

/// One synchronous update of the chain. `td` and `tdrc-residual` also
/// refresh `θ0 ← θ1` (their target copy); chain shifts of `itd`/`gitd` are
/// applied by [`run_expected`].
pub fn expected_step(state: &SequenceState, config: &ExpectedConfig, problem: &ExpectedProblem) -> Result<SequenceState> {
    config.validate()?;
    check_state(state, problem)?;
    if config.algorithm.single_function() && state.k() != 1 {
        return Err(Error::arg(format!("{} expects a single function (K = 1)", config.algorithm.name())));
    }
    let mut params = raw(state);
    with_engine!(problem, state.k(), |e| {
        e.evaluate(&params);
        e.step(&mut params, config.algorithm, config.learning_rate);
    });
    let mut next = state.clone();
    for (p, v) in next.params.iter_mut().zip(params) {
        p.values_mut().copy_from_slice(&v);
    }
    if config.algorithm.single_function() {
        next.shift();
    }
    Ok(next)
}

/// Runs `config.steps` expected steps and records the metrics.
pub fn run_expected(config: &ExpectedConfig) -> Result<TraceSeries> {
    run_expected_with_state(config).map(|(trace, _)| trace)
}

/// Like [`run_expected`], also returning the final chain.
pub fn run_expected_with_state(config: &ExpectedConfig) -> Result<(TraceSeries, SequenceState)> {
    config.validate()?;
    let problem = ExpectedProblem::from_config(config)?;
    let init = problem.initial_params(config.init_scheme())?;
    let start = SequenceState::uniform(init, config.effective_k());
    run_expected_from(config, &problem, start)
}

/// Runs from an explicit starting chain.
pub fn run_expected_from(
    config: &ExpectedConfig,
    problem: &ExpectedProblem,
    start: SequenceState,
) -> Result<(TraceSeries, SequenceState)> {
    config.validate()?;
    check_state(&start, problem)?;
    let mut params = raw(&start);
    let trace = match problem {
        ExpectedProblem::Linear { mp, model } => {
            let mut chain = LinearChain::new(mp, model, &params);
            let trace = run_chain(&mut chain, config);
            chain.store(&mut params);
            trace
        }
        ExpectedProblem::Triangle { op, model } => {
            let mut chain = GenericChain {
                engine: Engine::new(op, model, start.k()),
                params,
            };
            let trace = run_chain(&mut chain, config);
            params = chain.params;
            trace
        }
    };
    let mut end = start;
    for (p, v) in end.params.iter_mut().zip(params) {
        p.values_mut().copy_from_slice(&v);
    }
    Ok((trace, end))
}
