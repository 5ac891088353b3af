//! Data-parallel helpers with a sequential fallback.
//!
//! Work is always split and reassembled in index order, so results are
//! bit-identical whichever [`Exec`] mode runs them. Without the `parallel`
//! feature every mode executes sequentially.

/// How independent work items are executed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// `f(i)` for every `i` in `0..n`, returned in index order.
    pub fn map_indexed<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Maps `f` over `items`, preserving order.
    pub fn map<I, T, F>(self, items: &[I], f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&I) -> T + Sync + Send,
    {
        self.map_indexed(items.len(), |i| f(&items[i]))
    }

    /// Runs `f` on up to `jobs` items at a time (`jobs = 0` means the pool default).
    pub fn map_limited<I, T, F>(self, items: &[I], jobs: usize, f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&I) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel if jobs != 1 => {
                if jobs == 0 {
                    return self.map(items, f);
                }
                match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
                    Ok(pool) => pool.install(|| self.map(items, f)),
                    Err(_) => self.map(items, f),
                }
            }
            _ => {
                let _ = jobs;
                items.iter().map(f).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_preserve_order() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let seq = Exec::Sequential.map_indexed(1000, f);
        let par = Exec::Parallel.map_indexed(1000, f);
        assert_eq!(seq, par);
        assert_eq!(seq[10], f(10));
    }

    #[test]
    fn limited_jobs_preserve_order() {
        let items: Vec<u32> = (0..64).collect();
        let out = Exec::Parallel.map_limited(&items, 2, |x| x * 3);
        assert_eq!(out, items.iter().map(|x| x * 3).collect::<Vec<_>>());
    }
}
