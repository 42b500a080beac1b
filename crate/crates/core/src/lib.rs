//! Simulation and analysis toolkit for federated learning over a fading
//! multiple-access channel with truncated channel inversion.
//!
//! The crate covers four aggregation schemes (ideal FedAvg, plain
//! over-the-air aggregation, over-the-air with short-term memory, and
//! long-term-memory error feedback), closed-form convergence-bound
//! evaluation, and a convex optimizer for the per-device truncation
//! thresholds.
//!
//! All randomness flows through named substreams derived from a single
//! root seed (see [`rng`]), so paired scheme comparisons observe the same
//! data batches, fading, and noise, and repeated runs are bit-identical.

pub mod bounds;
pub mod channel;
pub mod error;
pub mod feedback;
pub mod learning;
pub mod objective;
pub mod rng;
pub mod threshold;
pub mod vector;

pub use error::{Error, Result};
pub use vector::ModelVector;
