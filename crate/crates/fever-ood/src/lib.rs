//! Desk-scale laboratory for free-energy blind spots in neural OOD
//! detectors.
//!
//! Energy-scored detectors read `F(x) = -logsumexp(W_cls^T h(x))` off a
//! linear classifier head. Whenever the feature dimension exceeds the number
//! of classes the head's transpose has a nontrivial null space, so features
//! can move arbitrarily far inside it without changing the score at all, and
//! even orthogonal to it the score moves no faster than the least singular
//! value allows. This crate builds those blind spots explicitly (null-space
//! and least-singular-vector feature attacks), measures them (FPR95/AUROC on
//! attack-generated outlier sets), and trains small classifiers with the
//! mitigations that remove them: a dimension-reducing head layer plus
//! penalties on the inverse least singular value or the condition number of
//! `W_cls`.
//!
//! Data-parallel inner loops (direction sweeps, batch scoring, the
//! experiment grid) run on rayon under the default `parallel` feature and
//! fall back to sequential execution without it; results are identical
//! either way.

pub mod energy;
mod rng;
pub mod error;
pub mod evalharness;
pub mod exec;
pub mod linalg;
pub mod regularizers;
pub mod trainer;
pub mod vulnerability;

pub use error::{Error, Result};
