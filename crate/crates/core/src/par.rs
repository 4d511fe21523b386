//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) independent jobs run on the rayon
//! pool. Without it, or after [`set_parallel(false)`](set_parallel), they run
//! in order on the calling thread. Results are always returned in input order
//! and every reduction downstream happens sequentially over that order, so
//! outputs are bit-identical in both modes.

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Enables or disables parallel execution at runtime. Has no effect when the
/// crate was built without the `parallel` feature.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled && cfg!(feature = "parallel"), Ordering::SeqCst);
}

pub fn is_parallel() -> bool {
    PARALLEL.load(Ordering::SeqCst)
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Runs `f` over disjoint mutable chunks of `out` together with the chunk index.
pub fn for_each_chunk_mut<F>(out: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}
