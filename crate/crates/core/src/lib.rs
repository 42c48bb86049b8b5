//! Simulator for Bayesian online transfer learning.
//!
//! A learner predicts target-domain samples one at a time with the Bayesian
//! mixture strategy, using a batch of source-domain samples and a joint
//! prior linking source and target parameters. The crate measures the
//! resulting expected regret by Monte-Carlo replication, estimates the
//! conditional mutual information that equals it under log loss, and
//! evaluates the closed-form asymptotes and bounds it is compared against.

pub mod asymptotics;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod family;
pub mod math;
pub mod online;
pub mod posterior;
pub mod prior;
pub mod scenario;

pub use error::{Error, Result};
pub use family::{FamilyKind, FamilyModel, FisherBlocks, ParamBox, ParamPoint, Sample};
pub use posterior::{GridPosterior, GridSpec};
pub use prior::{Conditional, Marginal, PriorSpec, PropernessReport};
