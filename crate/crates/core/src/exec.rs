//! Execution helpers: one switch point between the rayon data-parallel path
//! and the sequential fallback.
//!
//! Every parallel site in the crate maps independent work items to outputs and
//! collects them **in input order**; no floating-point reduction ever crosses
//! item boundaries. That makes results identical whether the `parallel`
//! feature is on or off and whatever the thread-pool size — determinism the
//! test suite checks explicitly.

/// Map `items` through `f`, preserving order. Runs on the ambient rayon pool
/// when the `parallel` feature is enabled, sequentially otherwise.
#[cfg(feature = "parallel")]
pub(crate) fn map_collect<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_collect<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}

/// Always-sequential twin of [`map_collect`], kept unconditionally so callers
/// can cross-check parallel results against a scheduler-free reference.
pub(crate) fn map_collect_seq<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}

/// Cap the global thread pool at `n` workers (0 or absent keeps the default).
/// Results never depend on the pool size; this only tunes resource use. Must
/// be called before the pool's first use to take effect — later calls are
/// ignored, matching the pool's initialize-once behavior. A no-op without the
/// `parallel` feature.
#[cfg(feature = "parallel")]
pub fn configure_threads(n: Option<usize>) {
    if let Some(n) = n {
        if n > 0 {
            // An Err means the pool was already initialized; the ambient
            // default is used then, which is fine.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub fn configure_threads(_n: Option<usize>) {}
