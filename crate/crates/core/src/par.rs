//! Data-parallel helpers. With the `parallel` feature the work is spread over
//! a rayon pool; without it every call runs sequentially.

use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    Sequential,
    /// A dedicated pool of this many threads.
    Threads(usize),
    /// The global rayon pool.
    #[default]
    Auto,
}

impl Parallelism {
    /// `--jobs` semantics: 0 means auto, 1 sequential.
    pub fn from_jobs(jobs: usize) -> Self {
        match jobs {
            0 => Parallelism::Auto,
            1 => Parallelism::Sequential,
            k => Parallelism::Threads(k),
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self != Parallelism::Sequential
    }
}

impl fmt::Display for Parallelism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Parallelism::Sequential => f.write_str("1"),
            Parallelism::Threads(k) => write!(f, "{k}"),
            Parallelism::Auto => f.write_str("auto"),
        }
    }
}

impl FromStr for Parallelism {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("auto") {
            return Ok(Parallelism::Auto);
        }
        s.trim().parse().map(Parallelism::from_jobs)
    }
}

/// `(0..len).map(f).collect()`, possibly in parallel. Output order is the
/// index order regardless of scheduling.
pub fn map_range<R, F>(len: usize, par: Parallelism, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        match par {
            Parallelism::Sequential => (0..len).map(f).collect(),
            Parallelism::Auto => (0..len).into_par_iter().map(f).collect(),
            Parallelism::Threads(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
                Ok(pool) => pool.install(|| (0..len).into_par_iter().map(f).collect()),
                Err(_) => (0..len).map(f).collect(),
            },
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = par;
        (0..len).map(f).collect()
    }
}

/// `items.iter().map(f).collect()`, possibly in parallel.
pub fn map_slice<T, R, F>(items: &[T], par: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_range(items.len(), par, |i| f(&items[i]))
}
