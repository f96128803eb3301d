//! Dual-frequency flow-matching control for dynamic interception.
//!
//! A slow intent encoder summarizes a grid observation into a cached
//! embedding; a fast flow-matching policy regenerates an action chunk from
//! fresh proprioception and motion features with a single Euler step, and
//! only the head of each chunk is executed. The crate provides the toy
//! interception world, a latency-free expert, misaligned training data,
//! the networks and their training loops, a simulated-latency scheduler,
//! and an experiment harness.

pub mod dataset;
pub mod env;
pub mod error;
pub mod flow;
pub mod harness;
pub mod hash;
pub mod intent;
pub mod math;
pub mod motion;
pub mod oracle;
pub mod scheduler;

pub use error::{Result, TidalError};
