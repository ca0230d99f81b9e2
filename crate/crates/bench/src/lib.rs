//! Fixtures shared by the criterion benchmarks.

use flfl_core::data_io::{make_split, TestMode};
use flfl_core::synth::{smooth_field, SmoothFieldConfig};
use flfl_core::{CoordinateSet, Hyperparams, ObservationStore};

pub struct Fixture {
    pub store: ObservationStore,
    pub coords: CoordinateSet,
    pub hyper: Hyperparams,
}

/// A smooth synthetic field split at `rate`, with four regions.
pub fn fixture(sensors: usize, slots: usize, rate: f64) -> Fixture {
    let (matrix, coords) = smooth_field(&SmoothFieldConfig { sensors, slots, seed: 1, ..Default::default() });
    let store = make_split(&matrix, rate, TestMode::Complement, 1).expect("valid split");
    let hyper = Hyperparams { k: 4, z: 1e-3, top_k: 3, regions: 4, max_rounds: 1, ..Default::default() };
    Fixture { store, coords, hyper }
}
