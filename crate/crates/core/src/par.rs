//! Data-parallel helpers. With the `parallel` feature they dispatch to rayon
//! once the work estimate crosses [`MIN_PARALLEL_WORK`]; without it they run
//! the same closures sequentially. Every helper writes disjoint output
//! slots, so results are bitwise identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many multiply-adds a kernel stays on the calling thread.
pub const MIN_PARALLEL_WORK: usize = 1 << 15;

/// Calls `f(index, chunk)` for each `chunk_len`-sized chunk of `data`.
#[cfg(feature = "parallel")]
pub fn for_each_chunk<F>(data: &mut [f64], chunk_len: usize, work: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    if work >= MIN_PARALLEL_WORK && data.len() > chunk_len {
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    } else {
        data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
    }
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_chunk<F>(data: &mut [f64], chunk_len: usize, _work: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}

/// Ordered map over `0..n`.
#[cfg(feature = "parallel")]
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    (0..n).map(f).collect()
}

/// Runs `f` with all helpers confined to the current thread. Used by the
/// benchmarks to compare against the parallel path in one binary.
#[cfg(feature = "parallel")]
pub fn single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("building a one-thread pool")
        .install(f)
}

#[cfg(not(feature = "parallel"))]
pub fn single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    f()
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_see_their_index() {
        let mut v = vec![0.0; 4 * 1000];
        for_each_chunk(&mut v, 1000, usize::MAX, |i, c| c.fill(i as f64));
        assert_eq!(v[0], 0.0);
        assert_eq!(v[3999], 3.0);
    }

    #[test]
    fn map_keeps_order() {
        let v = map_indexed(100, |i| i * 2);
        assert_eq!(v, (0..100).map(|i| i * 2).collect::<Vec<_>>());
        let w = single_threaded(|| map_indexed(10, |i| i));
        assert_eq!(w.len(), 10);
    }
}
