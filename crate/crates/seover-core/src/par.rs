//! Dialogue-level parallelism.
//!
//! Work parallelizes across independent dialogues only — each dialogue
//! owns its tape, so nothing is shared but read-only parameters. With the
//! `parallel` feature disabled everything runs sequentially through the
//! same API. The `SEOVER_THREADS` environment variable (read once) caps
//! the worker count; `SEOVER_THREADS=1` forces sequential execution.
//!
//! Callers that must stay order-deterministic get it for free: results
//! come back in input order, and reductions over them happen sequentially
//! at the call site.

/// Sequential mapping, always available (benchmarks compare against it).
pub fn map_sequential<T, U>(items: &[T], f: impl Fn(&T) -> U) -> Vec<U> {
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
mod imp {
    use std::sync::OnceLock;

    static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();

    fn pool() -> &'static Option<rayon::ThreadPool> {
        POOL.get_or_init(|| {
            let cap = std::env::var("SEOVER_THREADS")
                .ok()
                .and_then(|v| v.parse::<usize>().ok())?;
            rayon::ThreadPoolBuilder::new()
                .num_threads(cap.max(1))
                .build()
                .ok()
        })
    }

    /// Map across dialogues, preserving input order in the output.
    pub fn map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync) -> Vec<U> {
        use rayon::prelude::*;
        match pool() {
            Some(p) => p.install(|| items.par_iter().map(&f).collect()),
            None => items.par_iter().map(&f).collect(),
        }
    }
}

#[cfg(not(feature = "parallel"))]
mod imp {
    pub fn map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync) -> Vec<U> {
        super::map_sequential(items, f)
    }
}

pub use imp::map;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_input_order() {
        let items: Vec<usize> = (0..100).collect();
        let doubled = map(&items, |x| x * 2);
        let sequential = map_sequential(&items, |x| x * 2);
        assert_eq!(doubled, sequential);
    }
}
