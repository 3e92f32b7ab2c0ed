//! Replicate dispatch over a worker pool.

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{config, Result};
use crate::rng::replicate_seed;

/// Runs independent replicates on a fixed number of worker threads.
/// Results come back in replicate order whatever the scheduling.
pub struct Runner {
    pool: ThreadPool,
    workers: usize,
}

impl Runner {
    /// `workers = 0` means one per available core.
    pub fn new(workers: usize) -> Result<Self> {
        let workers = if workers == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            workers
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| config(format!("cannot start {workers} workers: {e}")))?;
        Ok(Runner { pool, workers })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Evaluate `f(i, seed_i)` for `i in 0..n`.
    pub fn map<T, F>(&self, base_seed: u64, n: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64, u64) -> T + Sync + Send,
    {
        self.pool.install(|| {
            (0..n)
                .into_par_iter()
                .map(|i| f(i, replicate_seed(base_seed, i)))
                .collect()
        })
    }

    /// As `map`, stopping at the first error (in replicate order).
    pub fn try_map<T, F>(&self, base_seed: u64, n: u64, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64, u64) -> Result<T> + Sync + Send,
    {
        self.map(base_seed, n, f).into_iter().collect()
    }
}

impl Default for Runner {
    fn default() -> Self {
        Runner::new(0).expect("default worker pool")
    }
}
