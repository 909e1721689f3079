//! Data-parallel execution helpers.
//!
//! Hot loops (test-set evaluation over queries, k-means assignment, batch
//! scoring) fan out through [`map`], which runs on rayon when the `parallel`
//! feature is enabled and falls back to a plain sequential loop otherwise.
//! Both paths produce results in input order, so downstream reductions are
//! bit-identical regardless of thread count.
//!
//! [`map_seq`] is always available and [`map_par`] is exported alongside it
//! so the bench suite can compare the two directly.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Sequential map, kept as the reference path.
pub fn map_seq<T, U>(items: &[T], f: impl Fn(&T) -> U) -> Vec<U> {
    items.iter().map(f).collect()
}

/// Parallel map over a slice; output order matches input order.
#[cfg(feature = "parallel")]
pub fn map_par<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Send + Sync) -> Vec<U> {
    items.par_iter().map(f).collect()
}

/// Map over a slice using the configured execution mode.
#[cfg(feature = "parallel")]
pub fn map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Send + Sync) -> Vec<U> {
    map_par(items, f)
}

/// Map over a slice using the configured execution mode.
#[cfg(not(feature = "parallel"))]
pub fn map<T, U>(items: &[T], f: impl Fn(&T) -> U) -> Vec<U> {
    map_seq(items, f)
}

/// Cap the global worker pool. A limit of `None` leaves the default.
///
/// Callers pass the value of the `CONTIR_THREADS` environment variable.
/// Safe to call more than once; only the first call takes effect.
#[cfg(feature = "parallel")]
pub fn init_thread_cap(limit: Option<usize>) {
    if let Some(n) = limit {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

#[cfg(not(feature = "parallel"))]
pub fn init_thread_cap(_limit: Option<usize>) {}
