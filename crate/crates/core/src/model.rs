//! Shared domain types: observations, hyperparameters, sensor and server
//! state, and the gradient message that crosses the sensor/server boundary.

use std::collections::HashSet;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

/// One known cell `y[i][j]` of the sensor-by-time matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub i: usize,
    pub j: usize,
    pub y: f64,
    pub split: Split,
}

/// Sparse known entries of an `m x n` matrix, each tagged train or test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationStore {
    m: usize,
    n: usize,
    entries: Vec<Entry>,
}

impl ObservationStore {
    pub fn new(m: usize, n: usize, entries: Vec<Entry>) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::Range(format!("matrix must be non-empty, got {m}x{n}")));
        }
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.i >= m {
                return Err(Error::UnknownSensor { sensor: e.i });
            }
            if e.j >= n {
                return Err(Error::Index { j: e.j, n });
            }
            if !e.y.is_finite() {
                return Err(Error::Range(format!("observation ({}, {}) is not finite", e.i, e.j)));
            }
            if !seen.insert((e.i, e.j)) {
                return Err(Error::Range(format!("duplicate entry ({}, {})", e.i, e.j)));
            }
        }
        if !entries.iter().any(|e| e.split == Split::Train) {
            return Err(Error::Range("no training entries; sampling rate must be > 0".into()));
        }
        Ok(Self { m, n, entries })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn train(&self) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(|e| e.split == Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(|e| e.split == Split::Test)
    }

    pub fn train_count(&self) -> usize {
        self.train().count()
    }

    /// |train| / (m * n).
    pub fn sampling_rate(&self) -> f64 {
        self.train_count() as f64 / (self.m as f64 * self.n as f64)
    }

    /// Train entries grouped by sensor, each group in ascending time order.
    pub fn train_by_sensor(&self) -> Vec<Vec<Entry>> {
        let mut groups = vec![Vec::new(); self.m];
        for e in self.train() {
            groups[e.i].push(*e);
        }
        for g in &mut groups {
            g.sort_by_key(|e| e.j);
        }
        groups
    }

    /// Same entries with every observation value passed through `f`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|e| Entry { y: f(e.y), ..*e })
            .collect();
        Self {
            m: self.m,
            n: self.n,
            entries,
        }
    }
}

/// How the server folds one round of gradient messages into `Q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AggregationPolicy {
    /// Sum all messages per column, apply once at the round barrier.
    #[default]
    Sum,
    /// Average messages per column, apply once at the round barrier.
    Mean,
    /// Apply every message as it arrives; sensors read the live `Q`.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Latent dimension.
    pub k: usize,
    /// Ridge weight on `p` and `q`.
    pub lambda: f64,
    /// Weight of the Laplacian smoothness term.
    pub z: f64,
    /// SGD learning rate, shared by sensors and server.
    pub eta: f64,
    /// Nearest neighbours per sensor in the region graph.
    pub top_k: usize,
    /// Number of spatial regions.
    pub regions: usize,
    pub max_rounds: usize,
    pub seed: u64,
    pub init_scale: f64,
    /// Relative train-RMSE change below which a round counts as converged.
    pub convergence_tol: f64,
    pub aggregation: AggregationPolicy,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            k: 5,
            lambda: 0.01,
            z: 0.0,
            eta: 0.01,
            top_k: 3,
            regions: 1,
            max_rounds: 500,
            seed: 0,
            init_scale: 0.05,
            convergence_tol: 1e-5,
            aggregation: AggregationPolicy::Sum,
        }
    }
}

/// Checks `h` against itself and the shape of `store`, returning it unchanged.
pub fn validate_hyperparams(h: Hyperparams, store: &ObservationStore) -> Result<Hyperparams> {
    if h.k == 0 {
        return Err(Error::Range("latent dimension k must be >= 1".into()));
    }
    if h.k > store.m().min(store.n()) {
        return Err(Error::Dimension {
            k: h.k,
            m: store.m(),
            n: store.n(),
        });
    }
    for (name, v) in [("lambda", h.lambda), ("z", h.z), ("eta", h.eta)] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Range(format!("{name} must be finite and >= 0, got {v}")));
        }
    }
    if h.top_k == 0 {
        return Err(Error::Range("top_k must be >= 1".into()));
    }
    if h.regions == 0 || h.regions > store.m() {
        return Err(Error::Range(format!(
            "regions must lie in [1, {}], got {}",
            store.m(),
            h.regions
        )));
    }
    if !h.init_scale.is_finite() || h.init_scale <= 0.0 {
        return Err(Error::Range(format!("init_scale must be > 0, got {}", h.init_scale)));
    }
    if h.convergence_tol.is_nan() || h.convergence_tol < 0.0 {
        return Err(Error::Range(format!(
            "convergence_tol must be >= 0, got {}",
            h.convergence_tol
        )));
    }
    Ok(h)
}

/// One sensor's private state. Only `p` changes during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorState {
    pub id: usize,
    pub region: usize,
    pub p: Array1<f64>,
    pub local_entries: Vec<Entry>,
}

/// The server holds `Q` and nothing else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub q: Array2<f64>,
    pub round: usize,
}

/// The only payload a sensor ever sends to the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientMessage {
    pub j: usize,
    pub grad: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(m: usize, n: usize) -> ObservationStore {
        let entries = vec![Entry {
            i: 0,
            j: 0,
            y: 1.0,
            split: Split::Train,
        }];
        ObservationStore::new(m, n, entries).unwrap()
    }

    #[test]
    fn beijing_shape_accepts_k5() {
        let h = Hyperparams {
            k: 5,
            ..Default::default()
        };
        assert_eq!(validate_hyperparams(h.clone(), &store(35, 8647)).unwrap(), h);
    }

    #[test]
    fn zero_rank_is_range_error() {
        let h = Hyperparams {
            k: 0,
            ..Default::default()
        };
        assert!(matches!(validate_hyperparams(h, &store(35, 8647)), Err(Error::Range(_))));
    }

    #[test]
    fn rank_above_sensor_count_is_dimension_error() {
        let h = Hyperparams {
            k: 50,
            ..Default::default()
        };
        assert!(matches!(
            validate_hyperparams(h, &store(35, 8647)),
            Err(Error::Dimension { k: 50, m: 35, .. })
        ));
    }

    #[test]
    fn negative_weights_rejected() {
        for h in [
            Hyperparams { lambda: -1.0, ..Default::default() },
            Hyperparams { z: -0.1, ..Default::default() },
            Hyperparams { eta: -0.01, ..Default::default() },
        ] {
            assert!(matches!(validate_hyperparams(h, &store(10, 10)), Err(Error::Range(_))));
        }
    }

    #[test]
    fn store_rejects_duplicates_and_out_of_range() {
        let e = |i, j| Entry { i, j, y: 0.0, split: Split::Train };
        assert!(ObservationStore::new(2, 2, vec![e(0, 0), e(0, 0)]).is_err());
        assert!(matches!(
            ObservationStore::new(2, 2, vec![e(2, 0)]),
            Err(Error::UnknownSensor { sensor: 2 })
        ));
        assert!(matches!(ObservationStore::new(2, 2, vec![e(0, 5)]), Err(Error::Index { j: 5, n: 2 })));
    }

    #[test]
    fn store_without_train_entries_rejected() {
        let e = Entry { i: 0, j: 0, y: 0.0, split: Split::Test };
        assert!(matches!(ObservationStore::new(1, 1, vec![e]), Err(Error::Range(_))));
    }

    #[test]
    fn sampling_rate_counts_train_only() {
        let entries = vec![
            Entry { i: 0, j: 0, y: 1.0, split: Split::Train },
            Entry { i: 0, j: 1, y: 1.0, split: Split::Test },
        ];
        let s = ObservationStore::new(2, 2, entries).unwrap();
        assert_eq!(s.sampling_rate(), 0.25);
    }

    #[test]
    fn gradient_message_schema_is_exactly_j_and_grad() {
        let msg = GradientMessage { j: 3, grad: vec![0.5, -1.0] };
        let value = serde_json::to_value(&msg).unwrap();
        let mut keys: Vec<_> = value.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["grad", "j"]);

        let extra = r#"{"j": 1, "grad": [1.0], "y": 2.0}"#;
        assert!(serde_json::from_str::<GradientMessage>(extra).is_err());
    }

    #[test]
    fn serde_round_trip_preserves_types() {
        let s = store(3, 4);
        let back: ObservationStore = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);

        let h = Hyperparams::default();
        let back: Hyperparams = serde_json::from_str(&serde_json::to_string(&h).unwrap()).unwrap();
        assert_eq!(back, h);

        let server = ServerState { q: Array2::from_elem((2, 3), 0.25), round: 7 };
        let back: ServerState = serde_json::from_str(&serde_json::to_string(&server).unwrap()).unwrap();
        assert_eq!(back, server);
    }
}
