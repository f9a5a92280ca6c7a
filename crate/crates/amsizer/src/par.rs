//! Data-parallel map helpers. With the `parallel` feature (default) the
//! element-wise maps run on rayon; without it they fall back to the
//! sequential versions. Only order-preserving element-wise maps are
//! parallelized, so results are bit-identical across both builds.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Order-preserving parallel map.
#[cfg(feature = "parallel")]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    map_collect_seq(items, f)
}

/// Sequential reference implementation (also the benchmark baseline).
pub fn map_collect_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}
