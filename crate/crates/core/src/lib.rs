// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Generate, label, verify and select robot skill-acquisition solutions.
//!
//! The pipeline retrieves exemplar tasks from a growing pool, prompts a
//! policy model for decomposed solutions, labels every subtask prefix by
//! branching completions and executing them in a scripted world, trains a
//! process verifier on the labeled prefixes and uses it to rerank candidates.

pub mod golden;
pub mod harness;
pub mod inspect;
pub mod model_io;
pub mod rollout;
pub mod scripted_env;
pub mod synth;
pub mod task_pool;
pub mod trace;
pub mod verifier;

mod digest;

pub use digest::sha256_hex;
