//! Parallel execution helpers.
//!
//! Outputs are bit-identical at any thread count: parallel sections only write
//! disjoint chunks of an output slice, and every reduction in the library runs
//! sequentially in index order. The `BSDE_FPI_THREADS` environment variable
//! caps worker parallelism (`1` forces the sequential path even when the
//! `parallel` feature is compiled in).

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

/// 0 = not yet resolved, usize::MAX = unlimited (library default).
static THREAD_CAP: AtomicUsize = AtomicUsize::new(0);
static ENV_READ: OnceLock<usize> = OnceLock::new();

fn env_cap() -> usize {
    *ENV_READ.get_or_init(|| {
        match std::env::var("BSDE_FPI_THREADS") {
            Ok(v) => v.trim().parse::<usize>().ok().filter(|&n| n >= 1).unwrap_or(usize::MAX),
            Err(_) => usize::MAX,
        }
    })
}

/// Cap worker parallelism programmatically (overrides the environment).
/// `1` forces sequential execution; `usize::MAX` restores the default.
pub fn set_thread_cap(cap: usize) {
    THREAD_CAP.store(cap.max(1), Ordering::Relaxed);
}

pub fn thread_cap() -> usize {
    match THREAD_CAP.load(Ordering::Relaxed) {
        0 => env_cap(),
        n => n,
    }
}

/// Work below this many output elements is not worth a fork.
const PAR_MIN_LEN: usize = 1 << 13;

/// Apply `f` to consecutive chunks of `data` of length `chunk` (the last chunk
/// may be shorter). `f` receives the chunk index and the chunk. Chunks are
/// disjoint, so parallel and sequential execution write identical bytes.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    assert!(chunk > 0);
    #[cfg(feature = "parallel")]
    {
        if data.len() >= PAR_MIN_LEN && thread_cap() > 1 {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
            return;
        }
    }
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

/// Initialize the global worker pool honoring `BSDE_FPI_THREADS`. Safe to call
/// more than once; only the first call can win. Without the `parallel` feature
/// this is a no-op.
pub fn init_workers() {
    #[cfg(feature = "parallel")]
    {
        let cap = thread_cap();
        if cap != usize::MAX {
            // Ignore the error: the global pool may already exist.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(cap).build_global();
        }
    }
}
