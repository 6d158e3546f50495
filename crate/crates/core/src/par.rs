//! Execution strategy for the data-parallel loops (quadrature assembly,
//! Monte Carlo sampling, simulation batches).
//!
//! Every parallel path maps fixed-size chunks independently and reduces the
//! chunk results in index order, so output is bitwise identical to the
//! sequential path regardless of the worker count.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[derive(Default)]
pub enum Exec {
    Sequential,
    #[cfg(feature = "parallel")]
    #[default]
    Parallel,
}


impl Exec {
    /// Ordered map over `0..len`.
    pub fn map<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Exec::Sequential => (0..len).map(f).collect(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..len).into_par_iter().map(f).collect()
            }
        }
    }

    /// Maps `0..len` in chunks of `chunk` indices; results come back in chunk order.
    pub fn map_chunks<T, F>(self, len: usize, chunk: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
    {
        let chunk = chunk.max(1);
        let n_chunks = len.div_ceil(chunk);
        self.map(n_chunks, |c| {
            let start = c * chunk;
            f(start..(start + chunk).min(len))
        })
    }
}
