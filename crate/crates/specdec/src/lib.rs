//! Desk-scale laboratory for particle-based speculative decoding.
//!
//! Exact and approximate decoding algorithms over enumerable toy language
//! models, with the machinery to check them against brute-force ground
//! truth: importance-resampling error sweeps, effective-sample-size rate
//! predictions, closed-form roofline speed-up curves, and a paged KV-cache
//! simulator that certifies resampling as a metadata-only operation.

// Guards written as `!(x > 0.0)` reject NaN along with the out-of-range
// values; `partial_cmp` spellings would lose that in a wall of text.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod fixtures;
pub mod kvcache;
pub mod lm;
pub mod rng;
pub mod roofline;
pub mod samplers;

pub use error::{Error, Result};
