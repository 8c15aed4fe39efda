//! Data-parallel mapping over independent work items.
//!
//! Evaluation and prediction fan out per context window with read-only
//! parameters. With the `parallel` feature (default) the mapping runs on
//! rayon; without it the same call is a plain sequential loop. Both preserve
//! input order, so results are identical either way.

/// Sequential map, always available. The benchmark suite uses this as the
/// baseline regardless of enabled features.
pub fn seq_map<T: Sync, R: Send, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R + Sync,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn par_map<T: Sync, R: Send, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T: Sync, R: Send, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R + Sync + Send,
{
    seq_map(items, f)
}
