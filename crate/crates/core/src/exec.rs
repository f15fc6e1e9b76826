//! Data-parallel execution over sample ranges.
//!
//! Work is always cut into fixed-size chunks and partial results are
//! reduced in chunk order, so the sequential and parallel strategies give
//! bit-identical output.

/// Samples per work unit. Fixed so the reduction tree never depends on the
/// thread count.
pub const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise runs
    /// sequentially.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Applies `f` to each chunk range of `0..len` and returns the results in
    /// chunk order.
    pub fn map_chunks<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
    {
        let chunks = len.div_ceil(CHUNK);
        let range = move |c: usize| c * CHUNK..((c + 1) * CHUNK).min(len);
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel if chunks > 1 => {
                use rayon::prelude::*;
                (0..chunks).into_par_iter().map(|c| f(range(c))).collect()
            }
            _ => (0..chunks).map(|c| f(range(c))).collect(),
        }
    }

    /// Per-index map preserving order.
    pub fn map_indexed<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.map_chunks(len, |r| r.map(&f).collect::<Vec<_>>())
            .into_iter()
            .flatten()
            .collect()
    }

    /// Runs two closures, concurrently when parallel.
    pub fn join<A, B, RA, RB>(self, a: A, b: B) -> (RA, RB)
    where
        A: FnOnce() -> RA + Send,
        B: FnOnce() -> RB + Send,
        RA: Send,
        RB: Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => rayon::join(a, b),
            _ => (a(), b()),
        }
    }
}
