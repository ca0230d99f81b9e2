//! Federated latent-factor recovery of missing entries in sensor-by-time
//! matrices.
//!
//! Each sensor keeps its raw readings and its latent vector `p_i` to itself.
//! The server keeps the time-slot factors `Q`. Sensors in the same spatial
//! region exchange latent vectors so that a per-region graph Laplacian can
//! smooth the reconstruction, and only `(j, gradient)` pairs ever travel to
//! the server.
//!
//! ```no_run
//! use flfl_core::{data_io, orchestrator, Hyperparams};
//!
//! let matrix = data_io::load_matrix("matrix.csv")?;
//! let coords = data_io::load_coords("coords.csv")?;
//! let store = data_io::make_split(&matrix, 0.3, data_io::TestMode::Complement, 7)?;
//! let h = Hyperparams { k: 4, z: 1e-3, regions: 4, ..Default::default() };
//! let model = orchestrator::train(&store, &coords, &h)?;
//! println!("{:?}", model.history.last());
//! # Ok::<(), flfl_core::Error>(())
//! ```

pub mod data_io;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod orchestrator;
pub mod schedule;
pub mod server;
pub mod spatial;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{
    AggregationPolicy, Entry, GradientMessage, Hyperparams, ObservationStore, SensorState, ServerState, Split,
};
pub use orchestrator::{Federation, TrainedModel, TrainingHistory};
pub use spatial::{CoordinateSet, RegionGraph, SensorCoordinates};
