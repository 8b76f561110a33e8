//! Temporal-difference learning schemes on small Markov processes.
//!
//! Four ways of learning a value function are implemented side by side:
//! semi-gradient TD, the residual-gradient / TDRC correction, iterated TD
//! (a chain of K functions where function k regresses onto the Bellman
//! iteration of function k-1) and gradient iterated TD, which follows the
//! full gradient of the summed Bellman errors along that chain.
//!
//! Two execution modes are provided:
//!
//! * [`expected`]: exact, synchronous updates on tabular processes and the
//!   triangle process, with no sampling.
//! * [`sampled`]: replay-based control agents (DQN, QRC, i-DQN, Gi-DQN) on a
//!   small gridworld from [`env`].
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod approx;
pub mod env;
pub mod error;
pub mod expected;
pub mod mdp;
pub mod metrics;
pub mod sampled;

mod math;

pub use error::{Error, Result};
