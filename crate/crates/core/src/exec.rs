//! Execution context: sequential by default, data-parallel over independent
//! output blocks when the `parallel` feature is enabled and more than one
//! thread is budgeted.
//!
//! Determinism contract: work is only ever split across disjoint output
//! chunks whose contents are a pure function of the chunk index, and every
//! floating-point reduction stays inside one chunk in a fixed order. A run
//! therefore produces identical bits at any thread count, and with the
//! feature compiled out entirely.

use std::sync::OnceLock;

pub struct Exec {
    mode: Mode,
}

enum Mode {
    Sequential,
    #[cfg(feature = "parallel")]
    Pool(rayon::ThreadPool),
}

static GLOBAL: OnceLock<Exec> = OnceLock::new();
static GLOBAL_THREADS: OnceLock<usize> = OnceLock::new();

impl Exec {
    pub fn sequential() -> Self {
        Self {
            mode: Mode::Sequential,
        }
    }

    /// A context running on its own pool of `threads` workers. One thread
    /// (or a feature-less build) degrades to the sequential mode.
    #[cfg(feature = "parallel")]
    pub fn with_threads(threads: usize) -> Self {
        if threads <= 1 {
            return Self::sequential();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool construction");
        Self {
            mode: Mode::Pool(pool),
        }
    }

    #[cfg(not(feature = "parallel"))]
    pub fn with_threads(_threads: usize) -> Self {
        Self::sequential()
    }

    pub fn threads(&self) -> usize {
        match &self.mode {
            Mode::Sequential => 1,
            #[cfg(feature = "parallel")]
            Mode::Pool(p) => p.current_num_threads(),
        }
    }

    /// The process-wide default context. Thread count comes from
    /// [`Exec::set_global_threads`] if called before first use, otherwise
    /// from the `VLRR_THREADS` environment variable, otherwise 1.
    pub fn global() -> &'static Exec {
        GLOBAL.get_or_init(|| {
            let threads = GLOBAL_THREADS.get().copied().unwrap_or_else(env_threads);
            Exec::with_threads(threads)
        })
    }

    /// Requests a global thread count. Returns false when the global context
    /// was already built, in which case the request has no effect.
    pub fn set_global_threads(threads: usize) -> bool {
        GLOBAL_THREADS.set(threads.max(1)).is_ok() && GLOBAL.get().is_none()
    }

    /// Splits `data` into consecutive chunks of `chunk_len` and fills each by
    /// its index. Chunk contents must depend only on the index; the scheduler
    /// chooses where, never what, each chunk computes.
    pub(crate) fn for_each_chunk<F>(&self, data: &mut [f64], chunk_len: usize, fill: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        debug_assert!(chunk_len > 0 && data.len() % chunk_len == 0);
        match &self.mode {
            Mode::Sequential => {
                for (idx, chunk) in data.chunks_mut(chunk_len).enumerate() {
                    fill(idx, chunk);
                }
            }
            #[cfg(feature = "parallel")]
            Mode::Pool(pool) => {
                use rayon::prelude::*;
                pool.install(|| {
                    data.par_chunks_mut(chunk_len)
                        .enumerate()
                        .for_each(|(idx, chunk)| fill(idx, chunk));
                });
            }
        }
    }

    /// Maps each index in `0..n` to a value, preserving index order in the
    /// result. `f` must be a pure function of the index.
    pub(crate) fn map_indices<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match &self.mode {
            Mode::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            Mode::Pool(pool) => {
                use rayon::prelude::*;
                pool.install(|| (0..n).into_par_iter().map(f).collect())
            }
        }
    }
}

fn env_threads() -> usize {
    std::env::var("VLRR_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}
