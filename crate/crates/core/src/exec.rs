//! Worker-count plumbing: data-parallel maps over independent tasks.
//!
//! `jobs == 1` always takes the plain sequential path; any other value uses
//! a rayon pool when the `parallel` feature is enabled (`jobs == 0` means
//! rayon's default thread count). Results are collected in index order, so
//! output bytes do not depend on the schedule.

use crate::Result;

#[cfg(feature = "parallel")]
pub fn try_map_indexed<R, F>(jobs: usize, len: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync,
{
    use rayon::prelude::*;
    if jobs == 1 || len <= 1 {
        return (0..len).map(f).collect();
    }
    if jobs == 0 {
        // rayon's shared global pool
        return (0..len).into_par_iter().map(&f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| crate::Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| (0..len).into_par_iter().map(&f).collect())
}

#[cfg(not(feature = "parallel"))]
pub fn try_map_indexed<R, F>(_jobs: usize, len: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync,
{
    (0..len).map(f).collect()
}

/// Infallible variant.
pub fn map_indexed<R, F>(jobs: usize, len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    try_map_indexed(jobs, len, |i| Ok(f(i))).expect("infallible map")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_in_order() {
        let seq = map_indexed(1, 100, |i| i * i);
        let par = map_indexed(0, 100, |i| i * i);
        assert_eq!(seq, par);
    }
}
