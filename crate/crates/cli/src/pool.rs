//! Deterministic fan-out for independent runs: a fixed list of work
//! items is executed by up to `jobs` threads, and the results come back
//! in item order no matter which thread finished first. Every run seeds
//! its own randomness, so the output is identical whether the pool has
//! one worker or eight.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Runs `work(i)` for `i in 0..n` on up to `jobs` threads and returns
/// the results indexed by `i`.
pub fn run_indexed<T, F>(n: usize, jobs: usize, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    if n == 0 {
        return Vec::new();
    }
    if jobs <= 1 || n == 1 {
        return (0..n).map(work).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let result = work(i);
                slots.lock().expect("result slot lock")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slot lock")
        .into_iter()
        .map(|slot| slot.expect("every index was executed"))
        .collect()
}
