//! Exact-enumeration testbed for scalarized multi-objective policy optimization.
//!
//! Policies are tabular autoregressive softmax models over a finite vocabulary with
//! fixed-length completions, small enough that every expectation, gradient and Fisher
//! matrix can be computed by enumerating all completions.

// `!(x > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calculus;
pub mod env;
pub mod error;
pub mod oracle;
pub mod policy;
pub mod scalarize;
pub mod toy;
pub mod train;

pub use env::{EnvSpec, RewardTable, ScoreTable};
pub use error::{Error, Result};
pub use policy::{CompletionDist, SampledCompletion, TabularPolicy};
