//! Data-parallel helpers with a sequential fallback.
//!
//! All helpers return results in index order, so callers can reduce them
//! sequentially and stay bitwise deterministic.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is on.
#[cfg(feature = "parallel")]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Like [`map_range`] but stops at the first error (lowest index wins).
pub fn try_map_range<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_range(n, f).into_iter().collect()
}

/// Sums `f(0) + f(1) + … + f(n-1)` where the terms are produced in parallel
/// in fixed-size chunks and added strictly in index order. The result does
/// not depend on the thread count, and at most `chunk` terms are alive at once.
pub fn ordered_sum<T, F, A>(n: usize, chunk: usize, f: F, mut add: A) -> Option<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
    A: FnMut(&mut T, T),
{
    let chunk = chunk.max(1);
    let mut acc: Option<T> = None;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        for part in map_range(end - start, |i| f(start + i)) {
            match acc.as_mut() {
                Some(a) => add(a, part),
                None => acc = Some(part),
            }
        }
        start = end;
    }
    acc
}

/// Chunk size used by [`ordered_sum`] callers in this crate.
pub const SUM_CHUNK: usize = 16;

/// Number of worker threads that [`map_range`] will use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Runs `f` on a dedicated pool of `threads` workers. `None` uses the global
/// pool. Without the `parallel` feature the thread count is ignored.
pub fn with_threads<R, F>(threads: Option<usize>, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        match threads {
            Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build() {
                Ok(pool) => pool.install(f),
                Err(_) => f(),
            },
            None => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}
