//! Order-preserving parallel map with a serial fallback.
//!
//! With the `parallel` feature, work is spread over a rayon pool. The
//! `JMLS_REALIZE_THREADS` environment variable caps the pool size; `0` forces
//! serial execution. Results are returned in input order either way, and each
//! item is computed independently, so output does not depend on scheduling.

/// How to execute data-parallel loops.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ExecMode {
    Serial,
    /// Parallel when the `parallel` feature is enabled and the environment allows it.
    #[default]
    Auto,
}

pub const THREADS_ENV: &str = "JMLS_REALIZE_THREADS";

/// Thread cap from the environment; `None` when unset or unparsable.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|s| s.trim().parse().ok())
}

pub fn map<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match (mode, thread_cap()) {
        (ExecMode::Serial, _) | (_, Some(0)) => items.iter().map(f).collect(),
        (ExecMode::Auto, cap) => parallel_map(items, f, cap),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, R, F>(items: &[T], f: F, cap: Option<usize>) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    match cap {
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(_) => items.iter().map(f).collect(),
        },
        None => items.par_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, R, F>(items: &[T], f: F, _cap: Option<usize>) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}
