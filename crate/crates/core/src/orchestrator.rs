//! Round-synchronous simulation of the federated protocol.
//!
//! Each round the server broadcasts `Q`, every region shares its members'
//! latent vectors among themselves, sensors run local SGD, and the server
//! folds the returned gradients into `Q`. Every transfer is recorded in an
//! optional [`MessageLog`] so that routing can be audited after the fact.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::factor_rmse;
use crate::model::{
    validate_hyperparams, AggregationPolicy, Entry, GradientMessage, Hyperparams, ObservationStore, SensorState,
    ServerState,
};
use crate::schedule::{entry_order, init_factors, order_seed, ConvergenceMonitor};
use crate::server::{aggregate, apply_message, apply_update, Reduction};
use crate::spatial::{build_region_graphs, partition_regions, CoordinateSet, PartitionMode, RegionGraph};
use crate::trainer::{local_round, local_step, RegionSnapshot, SmoothnessCache};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub train_rmse: f64,
    /// `None` when there is nothing held out.
    pub test_rmse: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub records: Vec<RoundRecord>,
}

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&RoundRecord> {
        self.records.last()
    }

    fn push(&mut self, record: RoundRecord) {
        debug_assert!(self.records.last().is_none_or(|r| r.round < record.round));
        self.records.push(record);
    }
}

/// Final factors of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub p: Array2<f64>,
    pub q: Array2<f64>,
    pub history: TrainingHistory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Endpoint {
    Server,
    Sensor(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    /// The full latent matrix `Q`.
    LatentMatrix,
    /// A sensor's latent vector `p`, tagged with the sensor it belongs to.
    LatentVector { owner: usize },
    Gradient(GradientMessage),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub round: usize,
    pub from: Endpoint,
    pub to: Endpoint,
    pub payload: Payload,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MessageLog {
    pub transfers: Vec<Transfer>,
}

/// Counts of routing violations found in a [`MessageLog`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub gradients_to_server: usize,
    pub latent_shares: usize,
    pub cross_region_latent: usize,
    pub latent_to_server: usize,
    pub non_gradient_to_server: usize,
    pub gradients_between_sensors: usize,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.cross_region_latent == 0
            && self.latent_to_server == 0
            && self.non_gradient_to_server == 0
            && self.gradients_between_sensors == 0
    }
}

impl MessageLog {
    fn record(&mut self, round: usize, from: Endpoint, to: Endpoint, payload: Payload) {
        self.transfers.push(Transfer { round, from, to, payload });
    }

    /// Checks every transfer against the sensor-to-region map.
    pub fn audit(&self, region_of: &BTreeMap<usize, usize>) -> AuditReport {
        let mut report = AuditReport::default();
        for t in &self.transfers {
            match (&t.from, &t.to, &t.payload) {
                (Endpoint::Sensor(_), Endpoint::Server, Payload::Gradient(_)) => report.gradients_to_server += 1,
                (_, Endpoint::Server, Payload::LatentVector { .. }) => {
                    report.latent_to_server += 1;
                    report.non_gradient_to_server += 1;
                }
                (_, Endpoint::Server, _) => report.non_gradient_to_server += 1,
                (Endpoint::Sensor(a), Endpoint::Sensor(b), Payload::LatentVector { owner }) => {
                    report.latent_shares += 1;
                    let ra = region_of.get(a);
                    if ra.is_none() || ra != region_of.get(b) || ra != region_of.get(owner) {
                        report.cross_region_latent += 1;
                    }
                }
                (_, Endpoint::Sensor(_), Payload::Gradient(_)) => report.gradients_between_sensors += 1,
                _ => {}
            }
        }
        report
    }
}

/// Full simulated system: server, sensors, and region graphs.
#[derive(Debug, Clone)]
pub struct Federation {
    pub server: ServerState,
    pub sensors: Vec<SensorState>,
    pub regions: Vec<RegionGraph>,
    positions: Vec<usize>,
    hyper: Hyperparams,
    test: Vec<Entry>,
    history: TrainingHistory,
    log: Option<MessageLog>,
    parallel: bool,
}

/// Builds the server, sensors and region graphs with seeded initial factors.
pub fn initialize(store: &ObservationStore, coords: &CoordinateSet, h: &Hyperparams) -> Result<Federation> {
    let h = validate_hyperparams(h.clone(), store)?;
    let m = store.m();
    let ids: Vec<usize> = coords.coords.iter().map(|c| c.id).collect();
    if let Some(&sensor) = ids.iter().find(|&&id| id >= m) {
        return Err(Error::UnknownSensor { sensor });
    }
    if ids.len() != m {
        let missing = (0..m).find(|s| !ids.contains(s)).unwrap_or(m);
        return Err(Error::MissingCoordinate { sensor: missing });
    }

    let mode = match &coords.provided {
        Some(map) => PartitionMode::Provided(map),
        None => PartitionMode::Grid,
    };
    let assignment = partition_regions(&coords.coords, h.regions, mode)?;
    let regions = build_region_graphs(&coords.coords, &assignment, h.top_k)?;

    let (p, q) = init_factors(m, store.n(), h.k, h.init_scale, h.seed);
    let mut by_sensor = store.train_by_sensor();
    let mut sensors = Vec::with_capacity(m);
    let mut positions = Vec::with_capacity(m);
    for id in 0..m {
        let region = assignment[&id];
        positions.push(regions[region].position(id).expect("member of its region"));
        sensors.push(SensorState {
            id,
            region,
            p: p.row(id).to_owned(),
            local_entries: std::mem::take(&mut by_sensor[id]),
        });
    }
    Ok(Federation {
        server: ServerState { q, round: 0 },
        sensors,
        regions,
        positions,
        hyper: h,
        test: store.test().copied().collect(),
        history: TrainingHistory::default(),
        log: None,
        parallel: false,
    })
}

impl Federation {
    /// Record every transfer from now on.
    pub fn with_message_log(mut self) -> Self {
        self.log = Some(MessageLog::default());
        self
    }

    /// Run sensors on the rayon pool. Sum/Mean aggregation only; the
    /// sequential policy always runs sensors in id order.
    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn history(&self) -> &TrainingHistory {
        &self.history
    }

    pub fn message_log(&self) -> Option<&MessageLog> {
        self.log.as_ref()
    }

    pub fn region_of(&self) -> BTreeMap<usize, usize> {
        self.sensors.iter().map(|s| (s.id, s.region)).collect()
    }

    /// Sensor latent vectors stacked into `M x k`. Simulation-side view only;
    /// no participant ever holds this matrix.
    pub fn p_matrix(&self) -> Array2<f64> {
        let mut p = Array2::zeros((self.sensors.len(), self.hyper.k));
        for s in &self.sensors {
            p.row_mut(s.id).assign(&s.p);
        }
        p
    }

    fn train_rmse(&self, p: &Array2<f64>) -> f64 {
        factor_rmse(self.sensors.iter().flat_map(|s| &s.local_entries), p, &self.server.q)
            .expect("store guarantees train entries")
    }

    fn region_snapshots(&mut self, round: usize) -> Vec<Array2<f64>> {
        let snaps: Vec<Array2<f64>> = self
            .regions
            .iter()
            .map(|g| {
                let mut pm = Array2::zeros((g.size(), self.hyper.k));
                for (c, &s) in g.members.iter().enumerate() {
                    pm.row_mut(c).assign(&self.sensors[s].p);
                }
                pm
            })
            .collect();
        if let Some(log) = self.log.as_mut() {
            for g in &self.regions {
                for &from in &g.members {
                    for &to in g.members.iter().filter(|&&to| to != from) {
                        log.record(
                            round,
                            Endpoint::Sensor(from),
                            Endpoint::Sensor(to),
                            Payload::LatentVector { owner: from },
                        );
                    }
                }
            }
        }
        snaps
    }

    fn snapshot_for(&self, sensor: usize, region_p: &[Array2<f64>]) -> RegionSnapshot {
        let s = &self.sensors[sensor];
        let graph = &self.regions[s.region];
        let pos = self.positions[sensor];
        RegionSnapshot {
            p_matrix: region_p[s.region].clone(),
            lap_row: graph.lap_sq.row(pos).to_owned(),
            member_index: pos,
        }
    }

    /// One protocol round. On divergence the error carries the round number.
    pub fn run_round(&mut self) -> Result<()> {
        let start = Instant::now();
        let round = self.server.round + 1;
        let active: Vec<usize> = self
            .sensors
            .iter()
            .filter(|s| !s.local_entries.is_empty())
            .map(|s| s.id)
            .collect();
        if let Some(log) = self.log.as_mut() {
            for &s in &active {
                log.record(round, Endpoint::Server, Endpoint::Sensor(s), Payload::LatentMatrix);
            }
        }
        let region_p = self.region_snapshots(round);
        let diverged = |e: Error| if e.is_divergence() { Error::Divergence { round } } else { e };

        let (updates, messages) = match self.hyper.aggregation {
            AggregationPolicy::Sequential => self.sequential_pass(round, &active, &region_p).map_err(diverged)?,
            policy => {
                let q_snapshot = self.server.q.clone();
                let work = |&id: &usize| {
                    let snap = self.snapshot_for(id, &region_p);
                    let seed = order_seed(self.hyper.seed, round, id);
                    local_round(&self.sensors[id], &q_snapshot, &snap, &self.hyper, seed).map(|(p, m)| (id, p, m))
                };
                let results: Vec<_> = if self.parallel {
                    active.par_iter().map(work).collect::<Result<_>>()?
                } else {
                    active.iter().map(work).collect::<Result<_>>()?
                };
                let mut updates = Vec::with_capacity(results.len());
                let mut messages = Vec::new();
                for (id, p, msgs) in results {
                    updates.push((id, p));
                    messages.extend(msgs.into_iter().map(|m| (id, m)));
                }
                let reduction = if policy == AggregationPolicy::Mean { Reduction::Mean } else { Reduction::Sum };
                let flat: Vec<GradientMessage> = messages.iter().map(|(_, m)| m.clone()).collect();
                let agg = aggregate(&flat, self.server.q.nrows(), self.hyper.k, reduction)?;
                self.server = apply_update(self.server.clone(), &agg, self.hyper.eta).map_err(diverged)?;
                (updates, messages)
            }
        };

        for (id, p) in updates {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { round });
            }
            self.sensors[id].p = p;
        }
        if let Some(log) = self.log.as_mut() {
            for (id, m) in messages {
                log.record(round, Endpoint::Sensor(id), Endpoint::Server, Payload::Gradient(m));
            }
        }
        self.server.round = round;

        let p = self.p_matrix();
        let train_rmse = self.train_rmse(&p);
        if !train_rmse.is_finite() {
            return Err(Error::Divergence { round });
        }
        let test_rmse = factor_rmse(&self.test, &p, &self.server.q).ok();
        self.history.push(RoundRecord {
            round,
            train_rmse,
            test_rmse,
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(())
    }

    /// Every message is applied to `Q` the moment it is sent, and each sensor
    /// reads the live `Q` for its next entry.
    #[allow(clippy::type_complexity)]
    fn sequential_pass(
        &mut self,
        round: usize,
        active: &[usize],
        region_p: &[Array2<f64>],
    ) -> Result<(Vec<(usize, Array1<f64>)>, Vec<(usize, GradientMessage)>)> {
        let mut updates = Vec::with_capacity(active.len());
        let mut messages = Vec::new();
        for &id in active {
            let snap = self.snapshot_for(id, region_p);
            let cache = (self.hyper.z != 0.0).then(|| SmoothnessCache::new(&snap));
            let sensor = &self.sensors[id];
            let mut p = sensor.p.clone();
            for idx in entry_order(order_seed(self.hyper.seed, round, id), sensor.local_entries.len()) {
                let entry = &sensor.local_entries[idx];
                let msg = local_step(entry, &mut p, self.server.q.row(entry.j), cache.as_ref(), &self.hyper);
                apply_message(&mut self.server, &msg, self.hyper.eta)?;
                messages.push((id, msg));
            }
            updates.push((id, p));
        }
        Ok((updates, messages))
    }

    /// Runs rounds until the train RMSE settles or `max_rounds` is reached.
    pub fn train(&mut self) -> Result<()> {
        if self.hyper.max_rounds == 0 {
            return Ok(());
        }
        let initial = self.train_rmse(&self.p_matrix());
        let mut monitor = ConvergenceMonitor::new(self.hyper.convergence_tol, initial);
        for _ in 0..self.hyper.max_rounds {
            self.run_round()?;
            let rmse = self.history.last().expect("round recorded").train_rmse;
            if monitor.observe(rmse) {
                break;
            }
        }
        Ok(())
    }

    pub fn into_model(self) -> TrainedModel {
        TrainedModel {
            p: self.p_matrix(),
            q: self.server.q,
            history: self.history,
        }
    }
}

/// Initializes and trains a federation, returning the final factors.
pub fn train(store: &ObservationStore, coords: &CoordinateSet, h: &Hyperparams) -> Result<TrainedModel> {
    let mut fed = initialize(store, coords, h)?;
    fed.train()?;
    Ok(fed.into_model())
}

/// `P Q^T`.
pub fn predict_matrix(p: &Array2<f64>, q: &Array2<f64>) -> Result<Array2<f64>> {
    if p.ncols() != q.ncols() {
        return Err(Error::Shape {
            expected: format!("k={}", p.ncols()),
            found: format!("k={}", q.ncols()),
        });
    }
    Ok(p.dot(&q.t()))
}
