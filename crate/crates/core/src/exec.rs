//! Sequential or data-parallel batch mapping.
//!
//! With the `parallel` feature the [`Execution::Parallel`] strategy runs on
//! rayon; without it every strategy degrades to a plain iterator so results
//! are identical either way. Output order always matches input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Maps `f` over `items`, preserving order.
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    /// Like [`Execution::map`] but never uses more than `max_workers` threads.
    ///
    /// Used for I/O-bound fan-out (HTTP requests) where the global pool size
    /// is the wrong bound.
    pub fn map_bounded<T, U, F>(self, items: &[T], max_workers: usize, f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel if max_workers > 1 && items.len() > 1 => {
                match rayon::ThreadPoolBuilder::new().num_threads(max_workers).build() {
                    Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
                    Err(e) => {
                        log::warn!("falling back to sequential execution: {e}");
                        items.iter().map(f).collect()
                    }
                }
            }
            _ => {
                let _ = max_workers;
                items.iter().map(f).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree_and_keep_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let seq = Execution::Sequential.map(&xs, |x| x * x);
        let par = Execution::Parallel.map(&xs, |x| x * x);
        let bounded = Execution::Parallel.map_bounded(&xs, 3, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(seq, bounded);
        assert_eq!(seq[999], 999 * 999);
    }
}
