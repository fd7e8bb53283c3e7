//! Ordered parallel map on a pool sized by the caller's `jobs`.

use rayon::prelude::*;

/// Applies `f` to every item on up to `jobs` threads. Results come back in
/// input order regardless of scheduling.
pub(crate) fn map_ordered<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(f).collect()),
        Err(e) => {
            log::warn!("no worker pool ({e}); running sequentially");
            items.iter().map(f).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_kept() {
        let items: Vec<usize> = (0..37).collect();
        for jobs in [1, 3, 8] {
            assert_eq!(map_ordered(&items, jobs, |i| i * 2), (0..37).map(|i| i * 2).collect::<Vec<_>>());
        }
        assert!(map_ordered(&[] as &[u8], 4, |&b| b).is_empty());
    }
}
