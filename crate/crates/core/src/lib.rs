//! Tabular least-squares inverse Q-learning.
//!
//! The crate covers finite MDPs with absorbing states, maximum-entropy RL
//! primitives, the chi^2 mixture divergence, the LS-IQ family of critic losses
//! (with the SQIL, IQ and IQv0 baselines), a count-based inverse dynamics model
//! for learning from observations, and an end-to-end experiment driver on a
//! point-mass grid.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod divergence;
pub mod error;
pub mod experiments;
pub mod idm;
mod linalg;
pub mod lsiq;
pub mod mdp;
pub mod soft_rl;
pub mod table;

pub use error::{Error, Result};
pub use idm::InverseDynamicsModel;
pub use lsiq::{LsIqAgent, LsIqConfig};
pub use mdp::{TabularMdp, Transition, TransitionSet};
pub use soft_rl::{CriticState, Policy};
pub use table::Table;
