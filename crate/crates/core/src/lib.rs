//! Numerical laboratory for convergence of tabular Q-learning and SARSA
//! under unbounded rewards with finite second moments.
//!
//! Every learner is checked against an exact, noise-free oracle: value
//! iteration on the known model for the tabular learners, a closed-form
//! fixed point for the continuous-domain ripple learner, closed-form products
//! for the deterministic recurrences and central finite differences for the
//! policy-gradient identities.

pub mod diagnostics;
pub mod error;
pub mod learn;
pub mod mdp;
pub mod pg;
pub mod recurrences;
pub mod ripple;
pub mod schedule;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};
pub use learn::{q_learning_run, sarsa_run, Behavior, Decay, LearnConfig, RunDiagnostics};
pub use mdp::{compute_cr, validate_mdp, MdpSpec, RewardDist, ValidatedMdp};
pub use schedule::StepSchedule;
pub use solver::{bellman_apply, greedy_policy, value_iterate, QTable};
