use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::agent::Agent;
use super::replay::ReplayBuffer;
use super::SampledConfig;
use crate::env::ControlEnv;
use crate::error::Result;

/// One finished (or, on divergence, interrupted) episode.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Environment steps taken so far, counting this episode.
    pub env_step: usize,
    pub episode_return: f64,
    pub discounted_return: f64,
    pub length: usize,
    /// Mean over the updates made during the episode; NaN if none.
    pub mean_q_loss: f64,
    pub mean_h_loss: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainRecord {
    pub train_step: u64,
    pub env_step: usize,
    pub q_loss: f64,
    pub h_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpisodeTrace {
    pub episodes: Vec<EpisodeRecord>,
    /// One entry per update; `q_loss` doubles as the sampled sum of
    /// Bellman errors.
    pub losses: Vec<TrainRecord>,
    pub env_steps: usize,
    pub train_steps: u64,
    pub diverged: bool,
}

impl EpisodeTrace {
    /// Mean discounted return over the last `fraction` of episodes (at least
    /// one). `None` without episodes.
    pub fn final_discounted_return(&self, fraction: f64) -> Option<f64> {
        if self.episodes.is_empty() {
            return None;
        }
        let n = (libm::ceil(self.episodes.len() as f64 * fraction) as usize).clamp(1, self.episodes.len());
        let tail = &self.episodes[self.episodes.len() - n..];
        Some(tail.iter().map(|e| e.discounted_return).sum::<f64>() / n as f64)
    }
}

/// Runs one seeded control experiment. The environment, the behaviour
/// policy and replay sampling each draw from their own ChaCha8 stream of
/// `config.seed`. A non-finite loss stops the run and flags the trace.
pub fn run_control(config: &SampledConfig, env: &ControlEnv) -> Result<EpisodeTrace> {
    run_control_with_agent(config, env).map(|(trace, _)| trace)
}

/// Like [`run_control`], also returning the trained agent.
pub fn run_control_with_agent(config: &SampledConfig, env: &ControlEnv) -> Result<(EpisodeTrace, Agent)> {
    let mut agent = Agent::new(config, env.n_states(), env.n_actions())?;
    let stream = |s: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(config.seed);
        r.set_stream(s);
        r
    };
    let (mut env_rng, mut policy_rng, mut replay_rng) = (stream(1), stream(2), stream(3));
    let mut env = env.clone();
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut trace = EpisodeTrace::default();

    let mut state = env.reset_with(&mut env_rng);
    let (mut ret, mut disc, mut discount, mut length) = (0.0, 0.0, 1.0, 0usize);
    let (mut q_sum, mut h_sum, mut n_updates) = (0.0, 0.0, 0usize);
    for t in 0..config.total_steps {
        let action = agent.select_action(state, config.epsilon.value(t), &mut policy_rng)?;
        let tr = env.step(state, action, &mut env_rng)?;
        buffer.push(tr);
        ret += tr.reward;
        disc += discount * tr.reward;
        discount *= config.gamma;
        length += 1;
        trace.env_steps = t + 1;

        if t + 1 >= config.learning_starts {
            for _ in 0..config.utd.updates_at(t) {
                if let Some(d) = agent.train_step(&buffer, &mut replay_rng)? {
                    trace.losses.push(TrainRecord {
                        train_step: agent.train_steps(),
                        env_step: t + 1,
                        q_loss: d.q_loss,
                        h_loss: d.h_loss,
                    });
                    q_sum += d.q_loss;
                    h_sum += d.h_loss;
                    n_updates += 1;
                    if !d.is_finite() || !agent.online().all_finite() {
                        trace.diverged = true;
                        break;
                    }
                }
            }
        }
        trace.train_steps = agent.train_steps();

        if tr.terminal || trace.diverged {
            let mean = |s: f64| if n_updates == 0 { f64::NAN } else { s / n_updates as f64 };
            trace.episodes.push(EpisodeRecord {
                episode: trace.episodes.len(),
                env_step: t + 1,
                episode_return: ret,
                discounted_return: disc,
                length,
                mean_q_loss: mean(q_sum),
                mean_h_loss: mean(h_sum),
                diverged: trace.diverged,
            });
            if trace.diverged {
                break;
            }
            state = env.reset_with(&mut env_rng);
            (ret, disc, discount, length) = (0.0, 0.0, 1.0, 0);
            (q_sum, h_sum, n_updates) = (0.0, 0.0, 0);
        } else {
            state = tr.next_state;
        }
    }
    Ok((trace, agent))
}
