//! Deterministic parallel ensemble runner.
//!
//! Paths are grouped in fixed chunks; each chunk is folded sequentially and
//! the chunk results are merged by a pairwise tree in chunk order. The result
//! therefore depends only on the number of paths, never on the worker count.

use crate::stats::{tree_reduce, Moments};
use rayon::prelude::*;

pub(crate) const CHUNK: u64 = 1024;

/// Runs `f` inside a pool of `workers` threads (`0` = the global pool).
pub(crate) fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    if workers == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Folds `body(scratch, acc, path)` over `0..n_paths`.
pub(crate) fn run_chunked<A, S>(
    n_paths: u64,
    workers: usize,
    scratch: impl Fn() -> S + Sync + Send,
    init: impl Fn() -> A + Sync + Send,
    body: impl Fn(&mut S, &mut A, u64) + Sync + Send,
    merge: impl Fn(&mut A, &A) + Sync + Send,
) -> A
where
    A: Send + Clone,
{
    let n_chunks = n_paths.div_ceil(CHUNK);
    let parts: Vec<A> = with_workers(workers, || {
        (0..n_chunks)
            .into_par_iter()
            .map_init(&scratch, |s, c| {
                let mut acc = init();
                for p in c * CHUNK..((c + 1) * CHUNK).min(n_paths) {
                    body(s, &mut acc, p);
                }
                acc
            })
            .collect()
    });
    tree_reduce(&parts, &merge).unwrap_or_else(init)
}

pub(crate) fn merge_moments(a: &mut Vec<Moments>, b: &Vec<Moments>) {
    a.iter_mut().zip(b).for_each(|(x, y)| x.merge(y));
}
