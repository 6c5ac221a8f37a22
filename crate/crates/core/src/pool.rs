//! Worker-pool plumbing shared by the harness and selection.

use crate::error::{Error, Result};

/// Runs `f` inside a rayon pool of `workers` threads, or the global pool for
/// `None`. Callers collect results in index order, so output does not depend
/// on the worker count.
pub(crate) fn with_workers<T: Send>(
    workers: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(Error::invalid("worker count must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}"))),
    }
}
