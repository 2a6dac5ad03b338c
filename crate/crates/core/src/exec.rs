//! Deterministic execution helpers: seed fan-out and ordered parallel maps.
//!
//! Reproducibility contract: results never depend on thread scheduling.
//! Each worker derives its own RNG from the master seed through a fixed
//! splitting rule, and parallel maps collect results in index order, so a
//! run is bit-identical whether it executes on one thread or many, with or
//! without the `parallel` feature.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used everywhere in this crate. ChaCha8 is seed-stable across
/// platforms and rand versions, unlike `StdRng`.
pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer; the core of the seed-splitting rule.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the label bytes, used to give each subsystem its own stream.
fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed-splitting rule: `master` fans out to independent streams keyed by a
/// subsystem label and an index (worker id, episode id, ...).
///
/// `derive_seed(m, l, i) = splitmix64(m ^ splitmix64(fnv1a(l) + i))`
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(label_hash(label).wrapping_add(index)))
}

/// A seeded RNG for the given stream.
pub fn stream_rng(master: u64, label: &str, index: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label, index))
}

/// Whether worker loops run on the rayon pool or inline.
///
/// Both modes produce bit-identical results; `Sequential` exists for
/// benchmarking and for debugging on starved machines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    #[default]
    Parallel,
    Sequential,
}

/// Maps `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(mode: Parallelism, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    match mode {
        Parallelism::Parallel => (0..n).into_par_iter().map(f).collect(),
        Parallelism::Sequential => (0..n).map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(_mode: Parallelism, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Mutates each element of `items` with `f`, in parallel when enabled.
/// Each invocation owns its element exclusively, so ordering cannot matter.
#[cfg(feature = "parallel")]
pub fn for_each_mut<T, F>(mode: Parallelism, items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    use rayon::prelude::*;
    match mode {
        Parallelism::Parallel => items
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, item)| f(i, item)),
        Parallelism::Sequential => items.iter_mut().enumerate().for_each(|(i, item)| f(i, item)),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_mut<T, F>(_mode: Parallelism, items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    items.iter_mut().enumerate().for_each(|(i, item)| f(i, item));
}
