//! Replay-based control agents: DQN, QRC, i-DQN and Gi-DQN.
//!
//! All four share one network ([`MultiHeadApprox`](crate::approx::MultiHeadApprox))
//! with `K` q-heads and, where needed, h-heads that regress the expected TD
//! error. The per-sample loss for Gi-DQN is
//!
//! ```text
//! L_Q = Σ_{k<K} [(r + γ max Q_k(s')) ⌈H_{k+1}(s,a)⌉ − Q_k(s,a) ⌈δ_k⌉] − Q_K(s,a) ⌈δ_K⌉
//! L_H = Σ_{k=2..K} (⌈δ_k⌉ − H_k(s,a))² + β ‖z_k‖²
//! δ_k = r + γ max Q_{k−1}(s') − Q_k(s,a)
//! ```
//!
//! where `⌈·⌉` stops the gradient and `Q_0` is the target network. DQN is
//! the `K = 1` case, i-DQN drops the h-heads and bootstraps from per-k target
//! copies, and QRC is the single-function TDRC form with one h-head and an
//! online bootstrap.

mod agent;
mod optim;
mod replay;
mod run;

use alloc::format;
use alloc::vec;

use crate::approx::Architecture;
use crate::error::{Error, Result};

pub use agent::{Agent, Deltas, FrozenTerms, LossDiagnostics};
pub use optim::{AdamParams, Optimizer, OptimizerKind};
pub use replay::ReplayBuffer;
pub use run::{run_control, run_control_with_agent, EpisodeRecord, EpisodeTrace, TrainRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ControlAlgorithm {
    Dqn,
    Qrc,
    Idqn,
    Gidqn,
}

impl ControlAlgorithm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Dqn => "dqn",
            Self::Qrc => "qrc",
            Self::Idqn => "idqn",
            Self::Gidqn => "gidqn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case", tag = "kind"))]
pub enum TargetUpdate {
    /// Shift the chain every `period` train steps.
    Hard { period: usize },
    /// `θ̄0 ← τ θ1 + (1 − τ) θ̄0` after every train step.
    Soft { tau: f64 },
}

/// `updates` gradient steps per `env_steps` environment steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Utd {
    pub updates: usize,
    pub env_steps: usize,
}

impl Utd {
    /// Number of updates due after environment step `t` (0-based).
    pub fn updates_at(&self, t: usize) -> usize {
        (t + 1) * self.updates / self.env_steps - t * self.updates / self.env_steps
    }
}

/// Linear decay from `start` to `end` over `decay_steps` environment steps.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: usize,
}

impl EpsilonSchedule {
    pub fn constant(epsilon: f64) -> Self {
        EpsilonSchedule {
            start: epsilon,
            end: epsilon,
            decay_steps: 1,
        }
    }

    pub fn value(&self, step: usize) -> f64 {
        if step >= self.decay_steps {
            return self.end;
        }
        self.start + (self.end - self.start) * step as f64 / self.decay_steps as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SampledConfig {
    pub algorithm: ControlAlgorithm,
    /// Number of q-heads; `dqn` and `qrc` always use one.
    pub k: usize,
    /// Weight decay on h-head parameters.
    pub beta: f64,
    pub target: TargetUpdate,
    /// i-DQN: period (train steps) of the per-k target copy sync.
    pub chain_sync_period: usize,
    pub utd: Utd,
    pub batch_size: usize,
    pub lr_theta: f64,
    /// Learning rate of the h-heads; defaults to `lr_theta`.
    pub lr_z: Option<f64>,
    pub epsilon: EpsilonSchedule,
    pub gamma: f64,
    pub seed: u64,
    pub buffer_capacity: usize,
    /// Environment steps collected before the first update.
    pub learning_starts: usize,
    pub total_steps: usize,
    pub architecture: Architecture,
    pub optimizer: OptimizerKind,
    /// Apply weight decay as a separate shrink step instead of through the
    /// loss gradient.
    pub decoupled_weight_decay: bool,
}

impl SampledConfig {
    pub fn new(algorithm: ControlAlgorithm) -> Self {
        SampledConfig {
            algorithm,
            k: 5,
            beta: 1.0,
            target: TargetUpdate::Hard { period: 200 },
            chain_sync_period: 1,
            utd: Utd {
                updates: 1,
                env_steps: 1,
            },
            batch_size: 32,
            lr_theta: 3e-4,
            lr_z: None,
            epsilon: EpsilonSchedule {
                start: 1.0,
                end: 0.01,
                decay_steps: 5_000,
            },
            gamma: 0.99,
            seed: 0,
            buffer_capacity: 10_000,
            learning_starts: 500,
            total_steps: 40_000,
            architecture: Architecture::SharedLinear { trunk: vec![64] },
            optimizer: OptimizerKind::Adam(AdamParams::default()),
            decoupled_weight_decay: false,
        }
    }

    pub fn effective_k(&self) -> usize {
        match self.algorithm {
            ControlAlgorithm::Dqn | ControlAlgorithm::Qrc => 1,
            _ => self.k,
        }
    }

    /// Number of h-heads and the chain index of the first one.
    pub fn h_heads(&self) -> (usize, usize) {
        match self.algorithm {
            ControlAlgorithm::Gidqn => (self.k - 1, 2),
            ControlAlgorithm::Qrc => (1, 1),
            _ => (0, 2),
        }
    }

    pub fn lr_z(&self) -> f64 {
        self.lr_z.unwrap_or(self.lr_theta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k", "must be at least 1"));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::config("beta", format!("must be non-negative, got {}", self.beta)));
        }
        match self.target {
            TargetUpdate::Hard { period: 0 } => return Err(Error::config("target.period", "must be at least 1")),
            TargetUpdate::Soft { tau } if !(tau > 0.0 && tau <= 1.0) => {
                return Err(Error::config("target.tau", format!("must lie in (0, 1], got {tau}")))
            }
            _ => {}
        }
        if self.chain_sync_period == 0 {
            return Err(Error::config("chain_sync_period", "must be at least 1"));
        }
        if self.utd.env_steps == 0 {
            return Err(Error::config("utd.env_steps", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.lr_theta >= 0.0) {
            return Err(Error::config("lr_theta", format!("must be non-negative, got {}", self.lr_theta)));
        }
        if !(self.lr_z() >= 0.0) {
            return Err(Error::config("lr_z", format!("must be non-negative, got {}", self.lr_z())));
        }
        for (field, e) in [("epsilon.start", self.epsilon.start), ("epsilon.end", self.epsilon.end)] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::config(field, format!("must lie in [0, 1], got {e}")));
            }
        }
        if self.epsilon.decay_steps == 0 {
            return Err(Error::config("epsilon.decay_steps", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", format!("must lie in [0, 1], got {}", self.gamma)));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::config("buffer_capacity", "must be at least 1"));
        }
        Ok(())
    }
}

/// Evaluates `x² = max_h (2xh − h²)` by Newton ascent on the inner concave
/// problem. Returns the maximiser and the maximum.
pub fn square_biconjugate(x: f64) -> (f64, f64) {
    let objective = |h: f64| 2.0 * x * h - h * h;
    let mut h = 0.0;
    for _ in 0..8 {
        let slope = 2.0 * x - 2.0 * h;
        if slope == 0.0 {
            break;
        }
        h -= slope / -2.0;
    }
    (h, objective(h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utd_fractions() {
        let u = Utd {
            updates: 1,
            env_steps: 4,
        };
        let total: usize = (0..100).map(|t| u.updates_at(t)).sum();
        assert_eq!(total, 25);
        let u = Utd {
            updates: 3,
            env_steps: 2,
        };
        assert_eq!((0..10).map(|t| u.updates_at(t)).sum::<usize>(), 15);
    }

    #[test]
    fn epsilon_decays_linearly() {
        let e = EpsilonSchedule {
            start: 1.0,
            end: 0.0,
            decay_steps: 10,
        };
        assert_eq!(e.value(0), 1.0);
        assert_eq!(e.value(5), 0.5);
        assert_eq!(e.value(10), 0.0);
        assert_eq!(e.value(1000), 0.0);
    }

    #[test]
    fn defaults_and_validation() {
        let c = SampledConfig::new(ControlAlgorithm::Gidqn);
        assert_eq!((c.k, c.beta, c.chain_sync_period), (5, 1.0, 1));
        assert_eq!(c.h_heads(), (4, 2));
        assert_eq!(SampledConfig::new(ControlAlgorithm::Dqn).effective_k(), 1);
        let mut bad = c.clone();
        bad.k = 0;
        assert!(matches!(bad.validate(), Err(Error::Config { field: "k", .. })));
        let mut bad = c;
        bad.target = TargetUpdate::Soft { tau: 0.0 };
        assert!(matches!(bad.validate(), Err(Error::Config { field: "target.tau", .. })));
    }
}
