//! Fixed-confidence thresholding search over minimax trees with stochastic leaves.

pub mod allocation;
pub mod baselines;
pub mod engine;
pub mod error;
pub mod gai;
pub mod glr;
pub mod harness;
pub mod heap;
pub mod numeric;
pub mod reward;
pub mod sampling;
pub mod state;
pub mod tree;

pub use error::{Error, Result};
