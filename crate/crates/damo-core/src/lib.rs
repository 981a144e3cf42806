//! Exact tabular laboratory for dual-alignment maximin offline RL.
//!
//! Everything in this crate is deliberately small and dense: finite MDPs as
//! `ndarray` tables, occupancies by linear solve, f-divergences in closed
//! form, and a maximin solver whose inner problem has a checkable fixed
//! point. Every quantity that matters has two independent routes to it
//! (exact vs sampled, direct vs variational, solver vs oracle) so the test
//! suite can cross-examine the implementation instead of trusting it.

pub mod baselines;
pub mod data;
pub mod envs;
pub mod error;
pub mod fdiv;
pub mod mdp;
pub mod model;
pub mod occupancy;
pub mod ratio;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
