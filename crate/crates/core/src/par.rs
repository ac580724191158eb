//! Data-parallel map with a sequential fallback.
//!
//! Conversations are independent units of work during evaluation and
//! scoring, so those loops fan out with rayon when the `parallel` feature
//! (on by default) is enabled. Results are collected in input order and
//! all reductions happen sequentially afterwards, so the two code paths
//! produce bit-identical output.

#[cfg(feature = "parallel")]
pub(crate) fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}
