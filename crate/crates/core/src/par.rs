//! Data-parallel map over independent work items.
//!
//! With the `parallel` feature the items are spread over the rayon pool;
//! without it every mode runs sequentially. Results always come back in item
//! order, so reductions over them are bitwise reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionMode {
    #[default]
    Parallel,
    Sequential,
}

impl ExecutionMode {
    /// Whether this build can actually run work items concurrently.
    pub fn is_available(self) -> bool {
        match self {
            ExecutionMode::Sequential => true,
            ExecutionMode::Parallel => cfg!(feature = "parallel"),
        }
    }
}

/// `(0..n).map(f)` collected in order, possibly evaluated concurrently.
pub fn map_indexed<T, F>(n: usize, mode: ExecutionMode, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecutionMode::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Runs `f` with at most `threads` workers. `None` keeps the global pool,
/// which defaults to one worker per available core.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(0) => Err(Error::InvalidParams("thread count must be at least 1".into())),
        #[cfg(feature = "parallel")]
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidParams(e.to_string()))?;
            Ok(pool.install(f))
        }
        _ => Ok(f()),
    }
}
