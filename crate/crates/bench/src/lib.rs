//! Fixtures shared by the benchmarks.

use kspacings::spacings;
use kspacings::EmpiricalPath;

/// Sorted transformed points of one replicate of `n` k-spacings.
pub fn spacings_path(k: u32, n: usize, seed: u64) -> EmpiricalPath {
    let sample = spacings::sample_spacings(k, n, seed).expect("valid benchmark shape");
    EmpiricalPath::from(spacings::uniformize(&sample))
}
