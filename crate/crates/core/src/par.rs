//! Chunked sample-range execution.
//!
//! Sample ranges are cut into fixed-size chunks whose boundaries depend only
//! on the range, never on the worker count. Each chunk is reduced
//! sequentially and the chunk results come back in index order, so any fold
//! over them is bit-identical between the rayon and sequential builds.

use std::ops::Range;

pub(crate) const CHUNK: u64 = 1024;

fn chunks(range: Range<u64>) -> Vec<Range<u64>> {
    let mut out = Vec::with_capacity(((range.end - range.start) / CHUNK + 1) as usize);
    let mut start = range.start;
    while start < range.end {
        let end = (start + CHUNK).min(range.end);
        out.push(start..end);
        start = end;
    }
    out
}

/// Apply `f` to each chunk of `range`; results are ordered by chunk start.
#[cfg(feature = "parallel")]
pub(crate) fn map_chunks<T, F>(range: Range<u64>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<u64>) -> T + Sync + Send,
{
    use rayon::prelude::*;
    chunks(range).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_chunks<T, F>(range: Range<u64>, f: F) -> Vec<T>
where
    F: Fn(Range<u64>) -> T,
{
    chunks(range).into_iter().map(f).collect()
}

/// Run `op` with `workers` threads (0 = library default).
///
/// Without the `parallel` feature the worker count is ignored.
#[cfg(feature = "parallel")]
pub fn with_workers<R: Send>(workers: usize, op: impl FnOnce() -> R + Send) -> R {
    if workers == 0 {
        return op();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(op),
        Err(_) => op(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<R: Send>(_workers: usize, op: impl FnOnce() -> R + Send) -> R {
    op()
}
