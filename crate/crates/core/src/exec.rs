//! Execution strategy for the data-parallel loops (state sweeps, seed batches).
//!
//! With the `parallel` feature (on by default) the loops fan out over rayon's
//! global pool. Without it, or with [`Exec::Sequential`], they run on the
//! calling thread. Both paths produce identical results: every parallel loop
//! writes disjoint output slots and no reduction depends on scheduling order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// Row sweeps smaller than this stay sequential; thread hand-off costs more
/// than the work at desk-scale MDPs.
#[cfg(feature = "parallel")]
const MIN_PARALLEL_ROWS: usize = 64;

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Maps `f` over `items`, preserving order.
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Fills `out` row by row; `f(row_index, row)` sees each row exactly once.
    pub fn for_each_row<F>(self, out: &mut [f64], row_len: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        if row_len == 0 {
            return;
        }
        #[cfg(feature = "parallel")]
        if self.is_parallel() && out.len() / row_len >= MIN_PARALLEL_ROWS {
            out.par_chunks_mut(row_len)
                .enumerate()
                .for_each(|(i, row)| f(i, row));
            return;
        }
        out.chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
}
