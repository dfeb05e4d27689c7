//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over the rayon pool.
//! Without it, or after `set_exec(Exec::Sequential)`, the same closures run in
//! index order on the calling thread. Results are always returned in index order.

use std::sync::atomic::{AtomicU8, Ordering};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

static MODE: AtomicU8 = AtomicU8::new(if cfg!(feature = "parallel") { 1 } else { 0 });

/// Selects the execution mode for subsequent calls. `Parallel` is ignored
/// when the crate is built without the `parallel` feature.
pub fn set_exec(exec: Exec) {
    let v = match exec {
        Exec::Parallel if cfg!(feature = "parallel") => 1,
        _ => 0,
    };
    MODE.store(v, Ordering::Relaxed);
}

pub fn exec() -> Exec {
    if MODE.load(Ordering::Relaxed) == 1 {
        Exec::Parallel
    } else {
        Exec::Sequential
    }
}

/// Configures the global worker pool. `workers <= 1` selects sequential execution.
pub fn configure_workers(workers: usize) {
    if workers <= 1 {
        set_exec(Exec::Sequential);
        return;
    }
    #[cfg(feature = "parallel")]
    {
        // The global pool can only be built once; later calls keep the first size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
    set_exec(Exec::Parallel);
}

/// Evaluates `f(i)` for `i in 0..n` and collects the results in index order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec() == Exec::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Maps over a slice, preserving order.
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    map_range(items.len(), |i| f(&items[i]))
}

/// Fallible variant of [`map_range`]; returns the first error by index.
pub fn try_map_range<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    map_range(n, f).into_iter().collect()
}

/// Fallible variant of [`map_slice`]; returns the first error by index.
pub fn try_map_slice<S, T, F>(items: &[S], f: F) -> Result<Vec<T>>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> Result<T> + Sync + Send,
{
    map_slice(items, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let v = map_range(1000, |i| i * 2);
        assert_eq!(v, (0..1000).map(|i| i * 2).collect::<Vec<_>>());
    }

    #[test]
    fn first_error_wins() {
        let items: Vec<i32> = (0..10).collect();
        let r = try_map_slice(&items, |&x| {
            if x >= 4 {
                Err(crate::Error::InvalidParameter(x.to_string()))
            } else {
                Ok(x)
            }
        });
        assert!(matches!(r, Err(crate::Error::InvalidParameter(s)) if s == "4"));
    }
}
