//! Scoring, policy-optimization and evaluation harness for language-model
//! generated optimization-solver code.
//!
//! * [`reward`]: format, valid-code and majority-voting rewards.
//! * [`grpo`]: group advantages, KL estimator, clipped surrogate and its gradient.
//! * [`exec`]: sandbox-runner orchestration and the result envelope.
//! * [`eval`]: solution accuracy, Pass@k and reports.
//! * [`pipeline`]: candidate generation over a chat-completion endpoint,
//!   group annotation and pseudo-label export.
//! * [`toy`]: a small differentiable policy that runs the whole loop in-process.

pub mod error;
pub mod eval;
pub mod exec;
pub mod grpo;
pub mod jsonl;
pub mod pipeline;
pub mod reward;
pub mod tolerance;
pub mod toy;

pub use error::{Error, Result};
pub use tolerance::Tolerance;
