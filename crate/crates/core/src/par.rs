//! Grid-point data parallelism with a sequential fallback.
//!
//! With the `parallel` feature the maps below run on the rayon pool unless
//! sequential execution has been requested at runtime. Results are identical
//! either way: every output element depends only on its own index.

use std::sync::atomic::{AtomicBool, Ordering};

static SEQUENTIAL: AtomicBool = AtomicBool::new(false);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Parallel,
    Sequential,
}

/// Selects the execution mode for subsequent grid maps in this process.
pub fn set_execution(mode: Execution) {
    SEQUENTIAL.store(mode == Execution::Sequential, Ordering::Relaxed);
}

pub fn execution() -> Execution {
    if cfg!(feature = "parallel") && !SEQUENTIAL.load(Ordering::Relaxed) {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

/// `(0..n).map(f).collect()`, parallel when enabled.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if execution() == Execution::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}
