//! Execution strategy for data-parallel inner loops.
//!
//! Hot paths (Monte Carlo direction sweeps, batch scoring, the experiment
//! grid) are expressed as an index-to-value map. With the default `parallel`
//! feature the map runs on rayon; without it the same code runs sequentially.
//! Results are collected in index order either way, so outputs are identical
//! for both strategies whenever `f` itself is deterministic per index.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, parallel when the `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Map `f` over `0..n`, parallel when the `parallel` feature is enabled.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Sequential reference version of [`map_indexed`]. Always single-threaded;
/// used by tests as the determinism oracle and by the benches as the
/// comparison baseline.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
