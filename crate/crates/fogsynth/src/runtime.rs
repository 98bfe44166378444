//! Host implementations of the core execution hooks.

use std::time::Instant;

use fogsynth_core::exec::{Clock, Executor};
use rayon::prelude::*;

/// Runs node-local work on the rayon pool. Results keep item order, so a run
/// produces the same parameters as the sequential executor.
#[derive(Debug, Clone, Copy, Default)]
pub struct RayonExecutor;

impl Executor for RayonExecutor {
    fn map_mut<S, T, F>(&self, items: &mut [S], f: F) -> Vec<T>
    where
        S: Send,
        T: Send,
        F: Fn(usize, &mut S) -> T + Sync + Send,
    {
        items.par_iter_mut().enumerate().map(|(i, s)| f(i, s)).collect()
    }
}

/// Milliseconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        Self { start: Instant::now() }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now_ms(&self) -> f64 {
        self.start.elapsed().as_secs_f64() * 1e3
    }
}
