//! Path-level execution strategy.
//!
//! Estimators in this crate are written as a map over path indices followed
//! by an in-order reduction. Each path derives its own [`NoiseStream`]s from
//! `(seed, path index)`, so results do not depend on how the map is
//! scheduled.
//!
//! [`NoiseStream`]: crate::noise::NoiseStream

use alloc::vec::Vec;

/// Runs `f(0..n)` and returns the results in index order.
pub trait PathExecutor {
    fn run<T, F>(&self, n_paths: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Single-threaded executor.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl PathExecutor for Serial {
    fn run<T, F>(&self, n_paths: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n_paths).map(f).collect()
    }
}
