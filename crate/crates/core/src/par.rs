//! Thin data-parallel layer.
//!
//! With the `parallel` feature (default) the helpers fan out over rayon's
//! global pool; without it, or with [`Exec::Sequential`], they run inline.
//! Every helper returns results in input order, so callers that reduce the
//! outputs sequentially get the same bits regardless of scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution mode for the hot loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// Parallel when compiled with the `parallel` feature, sequential otherwise.
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Ordered `map` over a slice.
pub fn map<T, U, F>(exec: Exec, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Ordered `map` over fixed-size chunks. Chunk boundaries depend only on
/// `chunk`, never on the thread count.
pub fn map_chunks<T, U, F>(exec: Exec, items: &[T], chunk: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&[T]) -> U + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_chunks(chunk).map(f).collect();
    }
    let _ = exec;
    items.chunks(chunk).map(f).collect()
}

/// Ordered `map` over an index range.
pub fn map_range<U, F>(exec: Exec, n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}
