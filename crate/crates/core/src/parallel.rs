//! Worker pool sized by `PUSHEDFRONT_THREADS`.

use std::sync::OnceLock;

use rayon::{ThreadPool, ThreadPoolBuilder};

pub const THREADS_ENV: &str = "PUSHEDFRONT_THREADS";

fn pool() -> &'static ThreadPool {
    static POOL: OnceLock<ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let n = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or(0);
        ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
    })
}

/// Runs `f` inside the shared pool.
pub fn install<R: Send, F: FnOnce() -> R + Send>(f: F) -> R {
    pool().install(f)
}

pub fn threads() -> usize {
    pool().current_num_threads()
}
