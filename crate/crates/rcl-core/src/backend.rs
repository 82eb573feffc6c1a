//! Data-parallel execution helpers.
//!
//! The hot loops (featurizing, forward/backward passes, per-row loss terms,
//! ranking, pairwise diagnostics) are expressed as index-parallel maps over
//! independent rows. With the `parallel` feature the maps run on rayon;
//! without it they run sequentially. Outputs are collected in index order
//! and every floating-point reduction happens per output element in a fixed
//! order, so both paths produce bit-identical results regardless of thread
//! count.
//!
//! `set_parallel(false)` forces the sequential path at runtime even when the
//! feature is compiled in; the criterion bench uses this to compare the two
//! paths inside one binary.

#[cfg(feature = "parallel")]
use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
static PARALLEL_ENABLED: AtomicBool = AtomicBool::new(true);

/// Runtime switch for the rayon path. No-op without the `parallel` feature.
pub fn set_parallel(enabled: bool) {
    #[cfg(feature = "parallel")]
    PARALLEL_ENABLED.store(enabled, Ordering::Relaxed);
    #[cfg(not(feature = "parallel"))]
    let _ = enabled;
}

/// Whether the rayon path is compiled in and currently enabled.
pub fn parallel_enabled() -> bool {
    #[cfg(feature = "parallel")]
    {
        PARALLEL_ENABLED.load(Ordering::Relaxed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        false
    }
}

/// `(0..n).map(f)` collected in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Fill disjoint `width`-sized rows of `buf` through `f(row, slice)`.
pub fn fill_rows<F>(buf: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    assert!(width > 0 && buf.len() % width == 0);
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use rayon::prelude::*;
        buf.par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
        return;
    }
    for (i, row) in buf.chunks_mut(width).enumerate() {
        f(i, row);
    }
}
