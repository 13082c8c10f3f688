//! Data-parallel helpers with a sequential fallback.
//!
//! Cell loops only fan out above [`PAR_MIN_LEN`]; reductions are always
//! summed over fixed-size chunks in index order, so the parallel and the
//! sequential build produce bitwise-identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many cells the per-call scheduling overhead outweighs the work.
pub const PAR_MIN_LEN: usize = 1 << 14;

const CHUNK: usize = 2048;

/// How independent tasks (runs in a sweep, exponents in a grid) are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// `out[i] = f(i)` for every index.
pub fn fill_with<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if out.len() >= PAR_MIN_LEN {
        out.par_iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
        return;
    }
    for (i, v) in out.iter_mut().enumerate() {
        *v = f(i);
    }
}

/// Deterministic sum of `f(i)` over `0..len`.
pub fn sum_by<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunk_sum = |c: usize| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(len);
        (lo..hi).map(&f).sum::<f64>()
    };
    let chunks = len.div_ceil(CHUNK);
    #[cfg(feature = "parallel")]
    if len >= PAR_MIN_LEN {
        let partial: Vec<f64> = (0..chunks).into_par_iter().map(chunk_sum).collect();
        return partial.iter().sum();
    }
    (0..chunks).map(chunk_sum).sum()
}

/// Deterministic componentwise sums of `f(i)` over `0..len`.
pub fn sum_many<const K: usize, F>(len: usize, f: F) -> [f64; K]
where
    F: Fn(usize) -> [f64; K] + Sync + Send,
{
    let chunk_sum = |c: usize| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(len);
        let mut acc = [0.0; K];
        for i in lo..hi {
            let v = f(i);
            for j in 0..K {
                acc[j] += v[j];
            }
        }
        acc
    };
    let chunks = len.div_ceil(CHUNK);
    let combine = |parts: Vec<[f64; K]>| {
        let mut acc = [0.0; K];
        for part in parts {
            for j in 0..K {
                acc[j] += part[j];
            }
        }
        acc
    };
    #[cfg(feature = "parallel")]
    if len >= PAR_MIN_LEN {
        return combine((0..chunks).into_par_iter().map(chunk_sum).collect());
    }
    combine((0..chunks).map(chunk_sum).collect())
}

/// Maximum of `f(i)` over `0..len` (`-inf` when empty).
pub fn max_by<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if len >= PAR_MIN_LEN {
        return (0..len)
            .into_par_iter()
            .map(&f)
            .reduce(|| f64::NEG_INFINITY, f64::max);
    }
    (0..len).map(f).fold(f64::NEG_INFINITY, f64::max)
}

/// Maps independent tasks, in parallel when requested and available.
/// Output order always matches input order.
pub fn map_tasks<T, R, F>(items: &[T], exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}
