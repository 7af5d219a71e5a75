//! Execution policy for the data-parallel inner loops.
//!
//! Every parallel loop in the crate goes through [`map_range`] or
//! [`fill_range`]. Results are always collected in index order and any
//! reduction happens sequentially afterwards, so the output is bit-identical
//! whether the loop ran on the rayon pool or on the calling thread.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Forces the sequential code path even when the `parallel` feature is on.
pub fn set_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::SeqCst);
}

/// True when loops are dispatched to rayon.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

/// Evaluates `f(0..n)` and returns the results in index order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Writes `f(i)` into `out[i]` for every index.
pub fn fill_range<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            use rayon::prelude::*;
            out.par_iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
            return;
        }
    }
    for (i, v) in out.iter_mut().enumerate() {
        *v = f(i);
    }
}

/// Configures the global rayon pool. A no-op without the `parallel` feature.
pub fn init_threads(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        if threads > 0 {
            return rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global()
                .is_ok();
        }
    }
    let _ = threads;
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let v = map_range(100, |i| i * i);
        assert_eq!(v[7], 49);
        assert_eq!(v.len(), 100);
    }

    #[test]
    fn fill_writes_every_slot() {
        let mut out = vec![0.0; 17];
        fill_range(&mut out, |i| i as f64 + 0.5);
        assert_eq!(out[16], 16.5);
    }
}
