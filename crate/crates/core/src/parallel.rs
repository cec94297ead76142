//! Worker-pool sizing. `QP_THREADS` caps the number of workers; results never depend on it.

/// Runs `f` inside a pool of `QP_THREADS` workers, or the global pool when unset. Calls made
/// from inside a worker run inline.
pub(crate) fn install<R: Send, F: FnOnce() -> R + Send>(f: F) -> R {
    if rayon::current_thread_index().is_some() {
        return f();
    }
    let threads = std::env::var("QP_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    match threads.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}
