//! Deterministic task execution: the same task decomposition runs either on
//! rayon (default `parallel` feature) or sequentially, and every Monte-Carlo
//! task derives its own counter-based RNG stream. Results are collected in
//! task order and reduced sequentially, so artifacts are byte-identical
//! across both paths and any thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fixed number of Monte-Carlo draws per task. Tasks are the unit of
/// parallelism; keeping the size fixed keeps stream assignment independent
/// of the thread count.
pub const TASK_CHUNK: usize = 256;

/// RNG for task number `task` of a run seeded with `seed`. Streams of one
/// ChaCha seed are statistically independent, so tasks never share draws.
pub fn stream_rng(seed: u64, task: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task);
    rng
}

/// Runs `f` for every task index in `0..n` and returns results in task
/// order. Parallel when the `parallel` feature is enabled.
pub fn run_tasks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential twin of `run_tasks`, kept unconditionally so benchmarks can
/// compare both paths within one build.
pub fn run_tasks_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Number of fixed-size chunks covering `total` items.
pub fn chunk_count(total: usize) -> usize {
    total.div_ceil(TASK_CHUNK)
}

/// Bounds of chunk `i` within `total` items.
pub fn chunk_range(i: usize, total: usize) -> std::ops::Range<usize> {
    let start = i * TASK_CHUNK;
    start..(start + TASK_CHUNK).min(total)
}
