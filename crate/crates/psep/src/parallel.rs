//! Per-item parallelism on a rayon pool sized by `PSEP_THREADS`.

use psep_core::trainer::ItemMapper;
use rayon::prelude::*;

pub const THREADS_ENV: &str = "PSEP_THREADS";

/// Worker count from `PSEP_THREADS`, else the available cores.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Maps items on a dedicated thread pool; results keep item order, so
/// reductions over them are identical to a sequential run.
pub struct PoolMapper {
    pool: rayon::ThreadPool,
}

impl PoolMapper {
    pub fn new(threads: usize) -> anyhow::Result<Self> {
        Ok(Self { pool: rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()? })
    }

    pub fn from_env() -> anyhow::Result<Self> {
        Self::new(thread_count())
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl ItemMapper for PoolMapper {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        if self.threads() == 1 {
            return (0..n).map(f).collect();
        }
        self.pool.install(|| (0..n).into_par_iter().map(&f).collect())
    }
}
