//! Index-ordered parallel execution.

use rayon::prelude::*;

/// Evaluate `f(0..n)` and return the results in index order.
///
/// With `threads <= 1` the work runs inline on the caller's thread. Results
/// never depend on the thread count as long as `f` derives all randomness
/// from its index.
pub fn map_indexed<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if threads <= 1 || n < 2 {
        return (0..n).map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}); running sequentially");
            (0..n).map(f).collect()
        }
    }
}
