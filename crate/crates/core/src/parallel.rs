//! Deterministic fork-join execution over index ranges.
//!
//! Work is cut into fixed chunks of `chunk` consecutive indices. Which worker
//! runs a chunk is decided at run time, but the chunk boundaries depend only
//! on `(n, chunk)`, and results are always assembled in chunk order. Floating
//! point reductions combine per-chunk partials with a fixed pairwise tree, so
//! every output here is a function of the inputs alone.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

/// Environment variable that overrides [`ParallelConfig::workers`].
pub const WORKERS_ENV: &str = "VOXELCAP_WORKERS";

pub const DEFAULT_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParallelConfig {
    /// Worker threads; 0 picks the hardware parallelism.
    pub workers: usize,
    /// Elements per task.
    pub chunk: usize,
}

impl Default for ParallelConfig {
    fn default() -> Self {
        Self {
            workers: 0,
            chunk: DEFAULT_CHUNK,
        }
    }
}

impl ParallelConfig {
    pub fn serial() -> Self {
        Self::with_workers(1)
    }

    pub fn with_workers(workers: usize) -> Self {
        Self {
            workers,
            ..Self::default()
        }
    }

    pub fn with_chunk(mut self, chunk: usize) -> Self {
        self.chunk = chunk.max(1);
        self
    }

    /// Worker count after applying the `VOXELCAP_WORKERS` override and
    /// auto-detection.
    pub fn effective_workers(&self) -> usize {
        let requested = std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .unwrap_or(self.workers);
        if requested == 0 {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        } else {
            requested
        }
    }

    fn chunk_len(&self) -> usize {
        self.chunk.max(1)
    }
}

/// Runs `task(chunk_index, range)` for every chunk and returns the results in
/// chunk order.
fn run_chunks<R, F>(n: usize, cfg: &ParallelConfig, task: F) -> Vec<R>
where
    R: Send,
    F: Fn(std::ops::Range<usize>) -> R + Sync,
{
    let chunk = cfg.chunk_len();
    let n_chunks = n.div_ceil(chunk);
    let range = |c: usize| c * chunk..((c + 1) * chunk).min(n);
    let workers = cfg.effective_workers().min(n_chunks);
    if workers <= 1 {
        return (0..n_chunks).map(|c| task(range(c))).collect();
    }

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..n_chunks).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let c = next.fetch_add(1, Ordering::Relaxed);
                if c >= n_chunks {
                    break;
                }
                let out = task(range(c));
                slots.lock().expect("worker panicked")[c] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every chunk is processed before the scope joins"))
        .collect()
}

/// `output[i] = f(i)` for `i in 0..n`, identical to the serial loop.
pub fn par_map<T, F>(n: usize, f: F, cfg: &ParallelConfig) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let parts = run_chunks(n, cfg, |r| r.map(&f).collect::<Vec<T>>());
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p);
    }
    out
}

/// Fallible [`par_map`]. On failure returns the error of the lowest failing
/// index.
pub fn try_par_map<T, E, F>(n: usize, f: F, cfg: &ParallelConfig) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync,
{
    let parts = run_chunks(n, cfg, |r| r.map(&f).collect::<Result<Vec<T>, E>>());
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Reduces `f(0), .., f(n-1)` with `combine`.
///
/// Each chunk is folded left to right starting from `identity`; the chunk
/// partials are then combined pairwise (`(p0 + p1) + (p2 + p3)`, ...). The
/// shape of that tree depends only on `n` and `cfg.chunk`.
pub fn par_reduce<T, F, C>(n: usize, f: F, identity: T, combine: C, cfg: &ParallelConfig) -> T
where
    T: Send + Sync + Clone,
    F: Fn(usize) -> T + Sync,
    C: Fn(T, T) -> T + Sync,
{
    let partials = run_chunks(n, cfg, |r| {
        r.fold(identity.clone(), |acc, i| combine(acc, f(i)))
    });
    pairwise_combine(partials, identity, &combine)
}

pub(crate) fn pairwise_combine<T: Clone, C: Fn(T, T) -> T>(
    mut level: Vec<T>,
    identity: T,
    combine: &C,
) -> T {
    if level.is_empty() {
        return identity;
    }
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        let mut it = level.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(combine(a, b)),
                None => next.push(a),
            }
        }
        level = next;
    }
    level.pop().unwrap_or(identity)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfgs() -> Vec<ParallelConfig> {
        [1, 2, 4, 8]
            .into_iter()
            .map(|w| ParallelConfig::with_workers(w).with_chunk(7))
            .collect()
    }

    #[test]
    fn empty_map() {
        for cfg in cfgs() {
            assert!(par_map(0, |i| i, &cfg).is_empty());
        }
    }

    #[test]
    fn identity_map_copies_input() {
        let input: Vec<u32> = (0..1000).map(|i| i * 3 + 1).collect();
        for cfg in cfgs() {
            assert_eq!(par_map(input.len(), |i| input[i], &cfg), input);
        }
    }

    #[test]
    fn sum_to_5050() {
        for cfg in cfgs() {
            assert_eq!(par_reduce(100, |i| i as u64 + 1, 0, |a, b| a + b, &cfg), 5050);
        }
    }

    #[test]
    fn empty_reduce_is_identity() {
        for cfg in cfgs() {
            assert_eq!(par_reduce(0, |_| 1.0f64, 0.0, |a, b| a + b, &cfg), 0.0);
        }
    }

    #[test]
    fn float_reduce_is_worker_independent() {
        let xs: Vec<f64> = (0..10_000).map(|i| ((i as f64) * 0.7391).sin() * 1e3).collect();
        let serial = par_reduce(
            xs.len(),
            |i| xs[i],
            0.0,
            |a, b| a + b,
            &ParallelConfig::serial().with_chunk(64),
        );
        for w in [2, 3, 8] {
            let cfg = ParallelConfig::with_workers(w).with_chunk(64);
            let par = par_reduce(xs.len(), |i| xs[i], 0.0, |a, b| a + b, &cfg);
            assert_eq!(serial.to_bits(), par.to_bits());
        }
    }

    #[test]
    fn first_error_by_index() {
        for cfg in cfgs() {
            let r: Result<Vec<usize>, usize> =
                try_par_map(100, |i| if i % 30 == 29 { Err(i) } else { Ok(i) }, &cfg);
            assert_eq!(r, Err(29));
        }
    }

    #[test]
    fn pairwise_tree_shape() {
        let order = pairwise_combine(
            vec!["a".to_string(), "b".into(), "c".into(), "d".into(), "e".into()],
            String::new(),
            &|a: String, b: String| format!("({a}{b})"),
        );
        assert_eq!(order, "(((ab)(cd))e)");
    }
}
