//! Execution policy for the embarrassingly parallel loops (multi-starts,
//! candidate K fits, experiment cells).
//!
//! With the `parallel` feature disabled every policy runs sequentially, so the
//! results are identical either way: each work item owns its own RNG stream.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
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

/// `(0..n).map(f)` under the given policy, preserving index order.
pub fn map_indexed<R, F>(exec: Exec, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Sizes the global thread pool from `RJM_THREADS` if set. Returns the
/// configured count, or `None` when the variable is absent or the pool was
/// already initialized.
pub fn init_threads_from_env() -> Option<usize> {
    let n: usize = std::env::var("RJM_THREADS").ok()?.trim().parse().ok()?;
    if n == 0 {
        return None;
    }
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok()?;
    }
    Some(n)
}

/// Derives an independent seed from `seed` and a salt (SplitMix64 finalizer).
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed.wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_policies_agree() {
        let a = map_indexed(Exec::Sequential, 50, |i| i * i);
        let b = map_indexed(Exec::Parallel, 50, |i| i * i);
        assert_eq!(a, b);
    }
}
