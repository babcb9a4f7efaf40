//! ZoRL: average-reward reinforcement learning on continuous state-action
//! spaces by adaptive dyadic discretization and span-constrained optimism.
//!
//! The crate is organized bottom-up:
//!
//! - [`geometry`]: dyadic cells, the partition tree and the split rule.
//! - [`estimator`]: kernel estimates and confidence radii per active cell.
//! - [`solver`]: span-truncated extended value iteration.
//! - [`agent`]: the episodic ZoRL learner.
//! - [`env`]: benchmark environments.
//! - [`baselines`]: fixed-grid UCRL2 and RVI Q-learning.
//! - [`harness`] and [`cli`]: experiment matrix, CSV output, command line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod baselines;
pub mod cli;
pub mod env;
pub mod estimator;
pub mod geometry;
pub mod harness;
pub mod record;
pub mod solver;
