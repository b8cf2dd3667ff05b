//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature (on by default) [`ExecMode::Parallel`] fans work
//! out over the rayon pool. Without it, both modes run sequentially. Output
//! order always matches input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// True when this mode actually runs on more than one thread.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

/// Order-preserving map.
pub fn map<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Order-preserving map where each worker owns a piece of state built by
/// `init` (a scorer handle, typically). The sequential path builds it once.
pub fn map_init<T, R, S, I, F>(mode: ExecMode, items: &[T], init: I, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return items.par_iter().map_init(&init, |s, t| f(s, t)).collect();
    }
    let _ = mode;
    let mut state = init();
    items.iter().map(|t| f(&mut state, t)).collect()
}

/// Number of worker threads the parallel mode would use.
pub fn worker_count(mode: ExecMode) -> usize {
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return rayon::current_num_threads();
    }
    let _ = mode;
    1
}

/// Run `f` on a dedicated pool of `workers` threads, or on the global pool when
/// `workers` is `None`. A no-op wrapper without the `parallel` feature.
pub fn with_workers<R, F>(workers: Option<usize>, f: F) -> crate::Result<R>
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    if let Some(n) = workers {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| crate::Error::Experiment(format!("cannot build worker pool: {e}")))?;
        return Ok(pool.install(f));
    }
    let _ = workers;
    Ok(f())
}
