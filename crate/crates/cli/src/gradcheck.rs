//! Finite-difference checks of every analytic gradient in the library.

use gitd_core::approx::{
    central_difference, finite_diff_gradient, gradient, init_params, relative_error, Architecture, Differentiable,
    InitScheme, Layout, MlpApprox, MultiHeadApprox, ParamVector, SpiralApprox,
};
use gitd_core::env::Transition;
use gitd_core::expected::{expected_gradients, sum_of_bellman_errors, ExpectedAlgorithm, ExpectedProblem, SequenceState};
use gitd_core::mdp::TriangleGeometry;
use gitd_core::sampled::{Agent, ControlAlgorithm, SampledConfig};
use gitd_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::GradcheckSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub suite: &'static str,
    pub cases: usize,
    pub max_relative_error: f64,
}

impl SuiteResult {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_relative_error <= tolerance
    }
}

pub fn run(spec: &GradcheckSpec) -> Result<Vec<SuiteResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::new();
    let suites: [(&'static str, fn(&mut ChaCha8Rng, f64) -> Result<f64>); 3] =
        [("approx", approx_case), ("deltas", deltas_case), ("gitd-expected", gitd_case)];
    for (suite, case) in suites {
        let mut worst: f64 = 0.0;
        for _ in 0..spec.cases {
            worst = worst.max(case(&mut rng, spec.step)?);
        }
        out.push(SuiteResult {
            suite,
            cases: spec.cases,
            max_relative_error: worst,
        });
    }
    Ok(out)
}

/// Uniform in [-1, 1], so biases are nonzero and ReLUs stay off their kinks.
fn jittered(layout: &Layout, rng: &mut ChaCha8Rng) -> Result<ParamVector> {
    let values = (0..layout.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ParamVector::from_values(layout.clone(), values)
}

fn model_error<M: Differentiable>(model: &M, params: &ParamVector, input: &[f64], h: f64) -> Result<f64> {
    let analytic = gradient(model, params, input)?;
    let numeric = finite_diff_gradient(model, params, input, h)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| {
            if a.norm() == 0.0 && n.norm() < 1e-9 {
                0.0
            } else {
                relative_error(a.values(), n.values())
            }
        })
        .fold(0.0, f64::max))
}

fn approx_case(rng: &mut ChaCha8Rng, h: f64) -> Result<f64> {
    let n_in = rng.gen_range(1..5);
    let x: Vec<f64> = (0..n_in).map(|_| rng.gen_range(-2.0..2.0)).collect();
    match rng.gen_range(0..3) {
        0 => {
            let m = MlpApprox::new(vec![n_in, rng.gen_range(2..7), rng.gen_range(1..4)])?;
            let p = jittered(&m.layout(), rng)?;
            model_error(&m, &p, &x, h)
        }
        1 => {
            let arch = random_architecture(rng);
            let n_q = rng.gen_range(1..4);
            let m = MultiHeadApprox::new(n_in, rng.gen_range(1..4), n_q, n_q - 1, 2, &arch)?;
            let p = jittered(&m.layout(), rng)?;
            model_error(&m, &p, &x, h)
        }
        _ => {
            let eps = if rng.gen::<bool>() { 1 } else { -1 };
            let m = SpiralApprox::new(TriangleGeometry::new(eps)?);
            let p = init_params(&m.layout(), InitScheme::Constant(rng.gen_range(-20.0..20.0)))?;
            model_error(&m, &p, &[], h)
        }
    }
}

fn random_architecture(rng: &mut ChaCha8Rng) -> Architecture {
    match rng.gen_range(0..3) {
        0 => Architecture::Independent {
            hidden: vec![rng.gen_range(2..6)],
        },
        1 => Architecture::SharedNonlinear {
            trunk: vec![rng.gen_range(2..6)],
            head_hidden: rng.gen_range(2..5),
        },
        _ => Architecture::SharedLinear {
            trunk: vec![rng.gen_range(2..6)],
        },
    }
}

/// The update direction of `compute_deltas` against the surrogate loss.
fn deltas_case(rng: &mut ChaCha8Rng, h: f64) -> Result<f64> {
    let (n_states, n_actions) = (5, 3);
    let algorithm = [ControlAlgorithm::Dqn, ControlAlgorithm::Qrc, ControlAlgorithm::Idqn, ControlAlgorithm::Gidqn]
        [rng.gen_range(0..4)];
    let mut c = SampledConfig::new(algorithm);
    c.k = rng.gen_range(1..5);
    c.beta = rng.gen_range(0.0..2.0);
    c.gamma = 0.9;
    c.seed = rng.gen();
    c.architecture = random_architecture(rng);
    let mut agent = Agent::new(&c, n_states, n_actions)?;
    let layout = agent.online().layout().clone();
    *agent.online_mut() = jittered(&layout, rng)?;
    *agent.target_mut() = jittered(&layout, rng)?;
    let batch: Vec<Transition> = (0..8)
        .map(|_| Transition {
            state: rng.gen_range(0..n_states),
            action: rng.gen_range(0..n_actions),
            reward: rng.gen_range(-1.0..1.0),
            next_state: rng.gen_range(0..n_states),
            terminal: rng.gen_bool(0.2),
        })
        .collect();
    let d = agent.compute_deltas(&batch)?;
    let frozen = agent.frozen_terms(&batch)?;
    let mut failure = None;
    let fd = central_difference(
        |p| match agent.surrogate_loss(p, &batch, &frozen) {
            Ok(v) => v,
            Err(e) => {
                failure = Some(e);
                f64::NAN
            }
        },
        agent.online().values(),
        h,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(relative_error(d.grad.values(), &fd))
}

/// The expected gitd direction against ½·(1/n)·Σ_k ‖ΓV_{k−1} − V_k‖².
fn gitd_case(rng: &mut ChaCha8Rng, h: f64) -> Result<f64> {
    let (p, scale) = match rng.gen_range(0..3) {
        0 => (ExpectedProblem::star(), 1.0),
        1 => (ExpectedProblem::hall(), 1.0),
        _ => (ExpectedProblem::triangle(if rng.gen::<bool>() { 1 } else { -1 })?, 3.0),
    };
    let k = rng.gen_range(1..6);
    let layout = p.layout();
    let params = (0..=k)
        .map(|_| {
            let v = (0..layout.len()).map(|_| rng.gen_range(-scale..scale)).collect();
            ParamVector::from_values(layout.clone(), v)
        })
        .collect::<Result<Vec<_>>>()?;
    let state = SequenceState { params };
    let analytic: Vec<f64> = expected_gradients(&state, ExpectedAlgorithm::Gitd, &p)?
        .iter()
        .flat_map(|g| g.values().to_vec())
        .collect();
    let n = layout.len();
    let weight = 0.5 / p.n_states() as f64;
    let flat: Vec<f64> = state.params[1..].iter().flat_map(|q| q.values().to_vec()).collect();
    let numeric = central_difference(
        |x| {
            let mut s = state.clone();
            for (i, q) in s.params[1..].iter_mut().enumerate() {
                q.values_mut().copy_from_slice(&x[i * n..(i + 1) * n]);
            }
            sum_of_bellman_errors(&s, &p).map_or(f64::NAN, |v| weight * v)
        },
        &flat,
        h,
    );
    Ok(relative_error(&analytic, &numeric))
}
