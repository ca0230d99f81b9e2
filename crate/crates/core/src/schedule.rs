//! Seeded initialization, per-round entry ordering, and the stopping rule.
//! Federated and centralized training both draw from here so that, given the
//! same seed, they start from the same factors and visit entries in the same
//! order.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Factors with i.i.d. components uniform on `(0, scale]`. `Q` is drawn
/// first, then `P` row by row.
pub fn init_factors(m: usize, n: usize, k: usize, scale: f64, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || scale * (1.0 - rng.random::<f64>());
    let q = Array2::from_shape_simple_fn((n, k), &mut draw);
    let p = Array2::from_shape_simple_fn((m, k), &mut draw);
    (p, q)
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE5_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for one sensor's shuffle in one round.
pub fn order_seed(seed: u64, round: usize, sensor: usize) -> u64 {
    mix(mix(mix(seed) ^ round as u64) ^ sensor as u64)
}

/// A seeded permutation of `0..len`.
pub fn entry_order(order_seed: u64, len: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(order_seed));
    idx
}

/// Stops once the relative change in train RMSE stays below `tol` for
/// three consecutive rounds.
#[derive(Debug, Clone)]
pub struct ConvergenceMonitor {
    tol: f64,
    prev: f64,
    streak: usize,
}

impl ConvergenceMonitor {
    pub const REQUIRED_STREAK: usize = 3;

    pub fn new(tol: f64, initial_rmse: f64) -> Self {
        Self {
            tol,
            prev: initial_rmse,
            streak: 0,
        }
    }

    /// Records one round's train RMSE; returns true when training should stop.
    pub fn observe(&mut self, rmse: f64) -> bool {
        let delta = (rmse - self.prev).abs() / self.prev.abs().max(f64::MIN_POSITIVE);
        self.streak = if delta < self.tol { self.streak + 1 } else { 0 };
        self.prev = rmse;
        self.streak >= Self::REQUIRED_STREAK
    }
}
