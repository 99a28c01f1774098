//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) [`ExecMode::Parallel`] runs on rayon;
//! without it every mode runs sequentially. Results are always returned in
//! input order so callers stay deterministic either way.

/// How a batch of independent work items is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// Whether this build can actually run work in parallel.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

/// Order-preserving map over a slice.
pub fn map<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Like [`map`] but bounded to `threads` workers. `threads == 1` forces the
/// sequential path.
pub fn map_bounded<T, R, F>(mode: ExecMode, threads: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if threads <= 1 {
        return map(ExecMode::Sequential, items, f);
    }
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(|| map(ExecMode::Parallel, items, f)),
            Err(_) => map(ExecMode::Sequential, items, f),
        },
        _ => map(ExecMode::Sequential, items, f),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_preserve_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let seq = map(ExecMode::Sequential, &xs, |x| x * x);
        let par = map(ExecMode::Parallel, &xs, |x| x * x);
        let bounded = map_bounded(ExecMode::Parallel, 3, &xs, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(seq, bounded);
        assert_eq!(seq[10], 100);
    }
}
