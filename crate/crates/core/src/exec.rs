//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the `Parallel` mode fans work out on
//! the rayon global pool. Without it, every mode runs sequentially. Work items
//! never share mutable state and results are collected in input order, so both
//! modes produce bit-identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution strategy for embarrassingly parallel loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// `Parallel` when compiled with rayon support, otherwise `Sequential`.
    pub fn auto() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }

    pub fn map<T, R, F>(self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => items.into_par_iter().map(f).collect(),
            _ => items.into_iter().map(f).collect(),
        }
    }

    /// Applies `f` to consecutive chunks of `rows` rows of a row-major buffer
    /// and concatenates the per-chunk outputs in order.
    pub fn map_row_chunks<R, F>(self, data: &[f64], width: usize, chunk_rows: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize, &[f64]) -> Vec<R> + Sync + Send,
    {
        let chunk = (chunk_rows.max(1) * width).max(1);
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => data
                .par_chunks(chunk)
                .enumerate()
                .flat_map_iter(|(i, c)| f(i * chunk_rows.max(1), c))
                .collect(),
            _ => data
                .chunks(chunk)
                .enumerate()
                .flat_map(|(i, c)| f(i * chunk_rows.max(1), c))
                .collect(),
        }
    }
}
