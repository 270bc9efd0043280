//! Sequential / data-parallel execution of the per-instance and per-row loops.
//!
//! Every parallel path computes each output element with exactly the same
//! sequence of floating-point operations as the sequential path, so results
//! are bit-identical for any thread count. Without the `parallel` feature
//! [`Execution::Parallel`] falls back to the sequential loop.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    #[default]
    Sequential,
    Parallel,
}

impl Execution {
    /// Whether this build can actually run data-parallel loops.
    pub const PARALLEL_AVAILABLE: bool = cfg!(feature = "parallel");

    /// `f` applied to every item, results in input order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect(),
            _ => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
        }
    }

    /// Calls `f(chunk_index, chunk)` on consecutive `chunk_len`-sized chunks.
    pub fn for_each_chunk<F>(self, data: &mut [f64], chunk_len: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        let chunk_len = chunk_len.max(1);
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => data
                .par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c)),
            _ => data
                .chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c)),
        }
    }
}

impl std::str::FromStr for Execution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" | "seq" => Ok(Execution::Sequential),
            "parallel" | "par" => Ok(Execution::Parallel),
            other => Err(format!("unknown execution mode {other:?}")),
        }
    }
}
