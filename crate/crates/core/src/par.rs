//! Data-parallel map over independent work items.
//!
//! With the `parallel` feature the parallel mode runs on rayon; without it
//! both modes run sequentially. Results are returned in input order, so
//! output never depends on the mode or the thread count.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// `jobs <= 1` means sequential.
    pub fn from_jobs(jobs: usize) -> Self {
        if jobs <= 1 {
            ExecMode::Sequential
        } else {
            ExecMode::Parallel
        }
    }

    pub fn is_parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

pub fn map<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Runs `op` inside a pool limited to `jobs` threads.
pub fn with_jobs<R: Send>(jobs: usize, op: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if jobs > 1 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
                return pool.install(op);
            }
            log::warn!("could not build a {jobs}-thread pool; running on the global pool");
        }
    }
    let _ = jobs;
    op()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let items: Vec<u64> = (0..257).collect();
        let f = |x: &u64| x.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 7;
        let a = map(ExecMode::Sequential, &items, f);
        let b = map(ExecMode::Parallel, &items, f);
        assert_eq!(a, b);
        assert_eq!(a[3], f(&3));
    }

    #[test]
    fn jobs_map_to_modes() {
        assert_eq!(ExecMode::from_jobs(0), ExecMode::Sequential);
        assert_eq!(ExecMode::from_jobs(1), ExecMode::Sequential);
        assert_eq!(ExecMode::from_jobs(4), ExecMode::Parallel);
        assert_eq!(with_jobs(2, || 7), 7);
    }
}
