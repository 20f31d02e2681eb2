//! Data-parallel loop drivers.
//!
//! With the `parallel` feature (default) these fan out over rayon; without it
//! they degrade to plain sequential iteration. Every driver hands each task a
//! disjoint output slice and the per-slice computation is itself sequential,
//! so results are bit-identical across thread counts and with the feature
//! disabled.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Splits `out` into `chunk`-sized pieces and runs `f(index, piece)` on each.
pub fn for_each_chunk<T, F>(out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    debug_assert!(chunk > 0 && out.len() % chunk == 0);
    #[cfg(feature = "parallel")]
    {
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, piece)| f(i, piece));
    }
    #[cfg(not(feature = "parallel"))]
    {
        out.chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, piece)| f(i, piece));
    }
}

/// Maps `f` over `0..n`, collecting results in index order.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
