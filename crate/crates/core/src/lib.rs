//! Identity unlearning benchmark with a meta-learned one-step unlearning loss.
//!
//! The crate builds a synthetic identity-structured dataset, trains a small
//! classifier on it, and compares ways of removing every sample of a set of
//! identities when only one sample per identity (the support set) is still
//! available. [`metaunlearn`] learns a loss whose single gradient step on the
//! support set makes the model behave as if those identities had never been
//! seen; [`evaluation`] measures that against a retrained reference.

pub mod baselines;
pub mod classifier;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod metaunlearn;
pub mod nn;
pub mod persist;
pub mod scalar;

pub use error::{Error, Result};
