//! Seeded synthetic datasets: exact low-rank matrices and spatially smooth
//! sensor fields with low-rank temporal structure.

use std::f64::consts::TAU;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data_io::RawMatrix;
use crate::spatial::{CoordinateSet, SensorCoordinates};

/// `P Q^T` with every factor component uniform on `(0, 1]`.
pub fn exact_low_rank(m: usize, n: usize, rank: usize, seed: u64) -> RawMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || 1.0 - rng.random::<f64>();
    let p = Array2::from_shape_simple_fn((m, rank), &mut draw);
    let q = Array2::from_shape_simple_fn((n, rank), &mut draw);
    RawMatrix::new(p.dot(&q.t()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothFieldConfig {
    pub sensors: usize,
    pub slots: usize,
    /// Number of spatial modes, i.e. the rank of the noiseless matrix.
    pub rank: usize,
    /// Noise standard deviation as a fraction of the signal's.
    pub noise: f64,
    /// Side length of the square the sensors are scattered over.
    pub extent: f64,
    /// Upper bound on spatial oscillations across the square; each mode
    /// draws its frequency from `[0.5, 1] * spatial_cycles`.
    pub spatial_cycles: f64,
    /// Fraction of cells blanked out as missing with no ground truth.
    pub missing: f64,
    pub seed: u64,
}

impl Default for SmoothFieldConfig {
    fn default() -> Self {
        Self {
            sensors: 40,
            slots: 30,
            rank: 3,
            noise: 0.05,
            extent: 10.0,
            spatial_cycles: 0.3,
            missing: 0.0,
            seed: 100,
        }
    }
}

/// A synthetic field: sensor `i` at time `t` reads
/// `sum_r a_r(x_i, y_i) * b_r(t) + noise`, where each spatial mode `a_r` is a
/// low-frequency plane wave over the sensor square and each temporal mode
/// `b_r` is a seasonal cycle plus white jitter. Sensors sit on a jittered
/// grid covering the square.
pub fn smooth_field(cfg: &SmoothFieldConfig) -> (RawMatrix, CoordinateSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // jittered grid: one sensor per cell, kept away from the cell edges so
    // no two sensors get arbitrarily close
    let side = (cfg.sensors as f64).sqrt().ceil() as usize;
    let cell = cfg.extent / side as f64;
    let coords: Vec<SensorCoordinates> = (0..cfg.sensors)
        .map(|id| SensorCoordinates {
            id,
            x: cell * ((id % side) as f64 + rng.random_range(0.15..0.85)),
            y: cell * ((id / side) as f64 + rng.random_range(0.15..0.85)),
        })
        .collect();

    struct Mode {
        kx: f64,
        ky: f64,
        phase: f64,
        level: f64,
        period: f64,
        t_phase: f64,
        t_level: f64,
    }
    let modes: Vec<Mode> = (0..cfg.rank)
        .map(|r| {
            let angle = TAU * rng.random::<f64>();
            let freq = TAU / cfg.extent * cfg.spatial_cycles * rng.random_range(0.5..1.0);
            Mode {
                kx: freq * angle.cos(),
                ky: freq * angle.sin(),
                phase: TAU * rng.random::<f64>(),
                level: if r == 0 { 1.5 } else { 0.0 },
                period: rng.random_range(0.1..0.6) * cfg.slots as f64,
                t_phase: TAU * rng.random::<f64>(),
                t_level: if r == 0 { 2.0 } else { 0.0 },
            }
        })
        .collect();

    let spatial = Array2::from_shape_fn((cfg.sensors, cfg.rank), |(i, r)| {
        let (c, m) = (&coords[i], &modes[r]);
        m.level + (m.kx * c.x + m.ky * c.y + m.phase).sin()
    });
    let jitter = Normal::new(0.0, 0.3).expect("valid normal");
    let temporal = Array2::from_shape_fn((cfg.slots, cfg.rank), |(t, r)| {
        let m = &modes[r];
        m.t_level + (TAU * t as f64 / m.period + m.t_phase).sin() + jitter.sample(&mut rng)
    });
    let mut values = spatial.dot(&temporal.t());

    let n = values.len() as f64;
    let mean = values.sum() / n;
    let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    if cfg.noise > 0.0 {
        let noise = Normal::new(0.0, cfg.noise * std).expect("valid normal");
        values.mapv_inplace(|v| v + noise.sample(&mut rng));
    }
    if cfg.missing > 0.0 {
        for v in values.iter_mut() {
            if rng.random::<f64>() < cfg.missing {
                *v = f64::NAN;
            }
        }
    }
    (
        RawMatrix::new(values),
        CoordinateSet { coords, provided: None },
    )
}
