//! Execution mode for the data-parallel inner loops.
//!
//! Every batched kernel in the crate maps over independent items (samples in a
//! batch, images in an evaluation set) and then reduces the per-item results in
//! index order. Because the reduction order never depends on scheduling, the
//! sequential and parallel modes produce bit-identical results.
//!
//! The rayon path is compiled only with the `parallel` feature (on by default).
//! Without it, [`ExecMode::Parallel`] silently runs sequentially.

use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

static MODE: AtomicU8 = AtomicU8::new(1);

/// Selects the mode used by [`map_indexed`] for the whole process.
pub fn set_mode(mode: ExecMode) {
    MODE.store(
        match mode {
            ExecMode::Sequential => 0,
            ExecMode::Parallel => 1,
        },
        Ordering::Relaxed,
    );
}

pub fn mode() -> ExecMode {
    if MODE.load(Ordering::Relaxed) == 0 {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    }
}

/// True when the rayon backend was compiled in.
pub const fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    match mode() {
        ExecMode::Sequential => (0..n).map(f).collect(),
        ExecMode::Parallel => par_map_indexed(n, f),
    }
}

/// Maps `f` over a slice, returning results in order.
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    map_indexed(items.len(), |i| f(&items[i]))
}

#[cfg(feature = "parallel")]
fn par_map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Pairwise (cascade) summation; fixed association for a given length.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if values.len() <= BLOCK {
        return values.iter().fold(0.0, |acc, v| acc + v);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Runs `f` with the given mode and restores the previous one afterwards.
pub fn with_mode<R>(mode: ExecMode, f: impl FnOnce() -> R) -> R {
    let prev = self::mode();
    set_mode(mode);
    let out = f();
    set_mode(prev);
    out
}
