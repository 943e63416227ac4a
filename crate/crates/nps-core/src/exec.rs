//! Data-parallel execution with a sequential fallback.
//!
//! Work is split into fixed-size chunks and results are collected in chunk
//! order, so floating-point reductions group identically no matter how many
//! threads run — `Parallel` and `Sequential` produce bit-identical results.
//! With the `parallel` feature disabled, rayon is not compiled in and
//! `Parallel` degrades to the sequential path.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk size used by the training loops; fixed so that gradient summation
/// order never depends on thread count.
pub const GRAD_CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Threading {
    Parallel,
    Sequential,
}

impl Default for Threading {
    fn default() -> Self {
        Threading::Parallel
    }
}

/// Map `f` over fixed-size chunks of `items`; the result vector is in chunk
/// order. `f` receives (chunk_index, chunk).
pub fn map_chunks<T, R, F>(threading: Threading, items: &[T], chunk: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &[T]) -> R + Sync,
{
    assert!(chunk > 0);
    #[cfg(feature = "parallel")]
    if threading == Threading::Parallel {
        return items.par_chunks(chunk).enumerate().map(|(i, c)| f(i, c)).collect();
    }
    let _ = threading;
    items.chunks(chunk).enumerate().map(|(i, c)| f(i, c)).collect()
}

/// Map `f` over 0..n, collecting in index order.
pub fn map_indexed<R, F>(threading: Threading, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if threading == Threading::Parallel {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = threading;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_results_keep_order() {
        let items: Vec<usize> = (0..103).collect();
        let par = map_chunks(Threading::Parallel, &items, 10, |i, c| (i, c.iter().sum::<usize>()));
        let seq = map_chunks(Threading::Sequential, &items, 10, |i, c| (i, c.iter().sum::<usize>()));
        assert_eq!(par, seq);
        assert_eq!(par.len(), 11);
    }

    #[test]
    fn indexed_results_keep_order() {
        let par = map_indexed(Threading::Parallel, 50, |i| i * i);
        let seq = map_indexed(Threading::Sequential, 50, |i| i * i);
        assert_eq!(par, seq);
    }
}
