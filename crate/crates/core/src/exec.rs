//! Sequential or data-parallel execution of independent work items.
//!
//! With the `parallel` feature off, [`Execution::Parallel`] runs
//! sequentially; results are identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Whether this build can actually run work in parallel.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

/// `(0..n).map(f)` collected in order.
pub fn map_range<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

/// Like [`map_range`] but with at most `limit` items in flight.
pub fn map_range_bounded<T, F>(exec: Execution, n: usize, limit: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel if limit > 1 => {
            match rayon::ThreadPoolBuilder::new().num_threads(limit).build() {
                Ok(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
                Err(_) => (0..n).map(f).collect(),
            }
        }
        _ => {
            let _ = limit;
            (0..n).map(f).collect()
        }
    }
}
