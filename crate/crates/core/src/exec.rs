//! Execution hooks supplied by the host: how node-local work is scheduled
//! and where wall time comes from.

use alloc::vec::Vec;

/// Runs one closure per item. Results come back in item order no matter how
/// the work was scheduled, which keeps runs reproducible.
pub trait Executor: Sync {
    fn map_mut<S, T, F>(&self, items: &mut [S], f: F) -> Vec<T>
    where
        S: Send,
        T: Send,
        F: Fn(usize, &mut S) -> T + Sync + Send;
}

/// Deterministic single-threaded executor.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map_mut<S, T, F>(&self, items: &mut [S], f: F) -> Vec<T>
    where
        S: Send,
        T: Send,
        F: Fn(usize, &mut S) -> T + Sync + Send,
    {
        items.iter_mut().enumerate().map(|(i, s)| f(i, s)).collect()
    }
}

/// Monotone millisecond clock.
pub trait Clock {
    fn now_ms(&self) -> f64;
}

/// Always reads zero; used when reports must be byte-identical across runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn now_ms(&self) -> f64 {
        0.0
    }
}

impl<C: Clock + ?Sized> Clock for &C {
    fn now_ms(&self) -> f64 {
        (**self).now_ms()
    }
}
