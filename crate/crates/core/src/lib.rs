//! Truncated-history ("superstate") approximation of tabular POMDPs.
//!
//! The crate builds a finite MDP whose states are the last `l`
//! action–observation pairs of a history, solves and learns it, and checks
//! the resulting values against an exact belief-space oracle.
//!
//! Module map:
//! - [`pomdp`]: model, Bayes filter, simulator
//! - [`filter`]: Dobrushin coefficients and filter contraction estimates
//! - [`superstate`]: grouping operator and the superstate MDP
//! - [`planning`]: value iteration, policy evaluation, belief-tree oracle
//! - [`verify`]: closed-form bound evaluators and coupling construction
//! - [`learning`]: TD with linear features, POLITEX, regret
//! - [`envs`]: built-in benchmark models
//! - [`model_io`]: model and superstate-MDP files
//! - [`cli`]: command-line front end

pub mod cli;
pub mod envs;
pub mod error;
pub mod filter;
pub mod learning;
pub mod model_io;
pub mod planning;
pub mod pomdp;
pub mod rng;
pub mod superstate;
pub mod verify;

pub use error::{Error, Result};
pub use pomdp::{BeliefState, History, PomdpModel, Step};
pub use superstate::{Superstate, SuperstateMdp, SuperstateSpace};
