//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the helpers dispatch to rayon whenever the
//! current pool has more than one worker; otherwise (feature disabled, or a
//! single-threaded pool installed by the caller) they run plain iterators.
//! Every reduction is performed in a fixed order so results are bit-identical
//! across thread counts.

/// Number of items folded sequentially per chunk in [`chunked_sum`].
pub const CHUNK: usize = 512;

/// True when work will actually fan out to several threads.
pub fn is_parallel() -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads() > 1
    }
    #[cfg(not(feature = "parallel"))]
    {
        false
    }
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Maps `f` over a slice, preserving order.
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Sums `dim`-vectors produced by `f(i, out)` for `i in 0..n`.
///
/// Items are grouped in chunks of [`CHUNK`]; each chunk is accumulated
/// sequentially and the chunk totals are added in index order, so the
/// floating-point result does not depend on scheduling.
pub fn chunked_sum<F>(n: usize, dim: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let n_chunks = n.div_ceil(CHUNK);
    let partials = map_range(n_chunks, |c| {
        let mut acc = vec![0.0; dim];
        let mut buf = vec![0.0; dim];
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            buf.iter_mut().for_each(|b| *b = 0.0);
            f(i, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b;
            }
        }
        acc
    });
    let mut total = vec![0.0; dim];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}
