//! Self-paced multitask scheduling from smoothed weight variation.
//!
//! The scheduler trains on one task at a time and switches once the model's
//! weights stop moving much on it, measured by the symmetric KL divergence
//! between softmaxed parameter tensors of consecutive same-task updates.
//! A small encoder-decoder transformer, synthetic HRL/LRL task families and
//! an experiment harness are included so the scheduler can be exercised end
//! to end on one CPU core.

pub mod competence;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod rng;
pub mod scheduler;
pub mod tasks;
pub mod trainer;

pub use competence::{CompetenceTable, TaskId};
pub use error::{Error, Result};
pub use metrics::{MetricKind, WeightSnapshot};
pub use scheduler::{Scheduler, Strategy};
