//! H-step lookahead control with a learned dynamics ensemble and an
//! off-policy terminal value function.
//!
//! The crate is organized around the pieces of that pipeline:
//!
//! - [`mdp`]: transitions, replay buffer, discounted-return arithmetic.
//! - [`tabular`]: exact dynamic programming on small MDPs plus the
//!   performance-bound machinery used to sanity-check the planner theory.
//! - [`nn`]: small dense networks with explicit reverse-mode gradients,
//!   Gaussian heads, and Adam.
//! - [`ensemble`]: probabilistic dynamics ensemble trained on the buffer.
//! - [`sac`]: soft actor-critic learner producing the terminal value
//!   function and the behavioral prior.
//! - [`planner`]: actor-regularized trajectory optimization (reward,
//!   pessimistic, and cost-constrained variants).
//! - [`envs`]: desk-scale environments and dataset generators.
//! - [`harness`]: training loops, metrics, checkpoints, configuration.

pub mod envs;
pub mod ensemble;
pub mod harness;
pub mod mdp;
pub mod nn;
pub mod planner;
pub mod sac;
pub mod tabular;

pub use mdp::{ActionVec, DiscountSpec, ReplayBuffer, StateVec, Transition};
pub use nn::{Activation, AdamState, DenseNet};
pub use tabular::{BoundInputs, TabularMdp, TabularPolicy};
