//! Sensor-side training: instantaneous loss, the two gradients, and one
//! local round of SGD that yields gradient messages for the server.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Entry, GradientMessage, Hyperparams, SensorState};
use crate::schedule::entry_order;

/// What a sensor knows about its region at the start of a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSnapshot {
    /// Latent vectors of every region member, in region member order.
    pub p_matrix: Array2<f64>,
    /// Row `member_index` of `L L^T`.
    pub lap_row: Array1<f64>,
    pub member_index: usize,
}

impl RegionSnapshot {
    /// `(L L^T)_{i,.} P q_j^T`, with the owning sensor's row of `P` taken to
    /// be `p_own` rather than the snapshot value.
    pub fn smoothness(&self, p_own: ArrayView1<'_, f64>, q_j: ArrayView1<'_, f64>) -> f64 {
        self.lap_row
            .iter()
            .zip(self.p_matrix.rows())
            .enumerate()
            .map(|(c, (&l, row))| {
                let pq = if c == self.member_index { p_own.dot(&q_j) } else { row.dot(&q_j) };
                l * pq
            })
            .sum()
    }

    /// Splits the smoothness term into a fixed neighbour part and the
    /// coefficient on the sensor's own vector, so a round can reuse it.
    fn neighbour_mix(&self) -> (Array1<f64>, f64) {
        let mut mix = Array1::zeros(self.p_matrix.ncols());
        for (c, (&l, row)) in self.lap_row.iter().zip(self.p_matrix.rows()).enumerate() {
            if c != self.member_index && l != 0.0 {
                mix.scaled_add(l, &row);
            }
        }
        (mix, self.lap_row[self.member_index])
    }
}

pub fn predict_entry(p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> f64 {
    p.dot(&q)
}

/// Per-entry objective: squared residual, ridge on both vectors, and the
/// squared Laplacian-filtered reconstruction `lap_pq = (L P Q^T)_{i,j}`.
pub fn instantaneous_loss(
    y: f64,
    p: ArrayView1<'_, f64>,
    q: ArrayView1<'_, f64>,
    lap_pq: f64,
    lambda: f64,
    z: f64,
) -> f64 {
    let r = y - p.dot(&q);
    r * r + lambda * (p.dot(&p) + q.dot(&q)) + z * lap_pq * lap_pq
}

fn gradient(
    y: f64,
    own: ArrayView1<'_, f64>,
    other: ArrayView1<'_, f64>,
    smooth: f64,
    lambda: f64,
    z: f64,
) -> Array1<f64> {
    let residual = y - own.dot(&other);
    let coef = -2.0 * residual + 2.0 * z * smooth;
    let mut g = other.mapv(|v| coef * v);
    g.scaled_add(2.0 * lambda, &own);
    g
}

/// Gradient with respect to the sensor's own latent vector `p`.
pub fn grad_p(
    y: f64,
    p: ArrayView1<'_, f64>,
    region: &RegionSnapshot,
    q_j: ArrayView1<'_, f64>,
    lambda: f64,
    z: f64,
) -> Array1<f64> {
    let smooth = if z != 0.0 { region.smoothness(p, q_j) } else { 0.0 };
    gradient(y, p, q_j, smooth, lambda, z)
}

/// This entry's contribution to the gradient of column `j` of `Q`.
pub fn grad_q(
    y: f64,
    p: ArrayView1<'_, f64>,
    region: &RegionSnapshot,
    q_j: ArrayView1<'_, f64>,
    lambda: f64,
    z: f64,
) -> Array1<f64> {
    let smooth = if z != 0.0 { region.smoothness(p, q_j) } else { 0.0 };
    gradient(y, q_j, p, smooth, lambda, z)
}

/// Both gradients for one entry given a precomputed smoothness scalar.
pub(crate) fn entry_gradients(
    y: f64,
    p: ArrayView1<'_, f64>,
    q_j: ArrayView1<'_, f64>,
    smooth: f64,
    lambda: f64,
    z: f64,
) -> (Array1<f64>, Array1<f64>) {
    (
        gradient(y, p, q_j, smooth, lambda, z),
        gradient(y, q_j, p, smooth, lambda, z),
    )
}

/// Reusable per-round smoothness state for one sensor.
#[derive(Debug, Clone)]
pub(crate) struct SmoothnessCache {
    mix: Array1<f64>,
    self_coef: f64,
}

impl SmoothnessCache {
    pub(crate) fn new(region: &RegionSnapshot) -> Self {
        let (mix, self_coef) = region.neighbour_mix();
        Self { mix, self_coef }
    }

    pub(crate) fn value(&self, p: ArrayView1<'_, f64>, q_j: ArrayView1<'_, f64>) -> f64 {
        self.mix.dot(&q_j) + self.self_coef * p.dot(&q_j)
    }
}

/// One SGD step on a single entry: updates `p` in place and returns the
/// message carrying the `Q` gradient.
pub(crate) fn local_step(
    entry: &Entry,
    p: &mut Array1<f64>,
    q_j: ArrayView1<'_, f64>,
    cache: Option<&SmoothnessCache>,
    h: &Hyperparams,
) -> GradientMessage {
    let smooth = match cache {
        Some(c) if h.z != 0.0 => c.value(p.view(), q_j),
        _ => 0.0,
    };
    let (gp, gq) = entry_gradients(entry.y, p.view(), q_j, smooth, h.lambda, h.z);
    p.scaled_add(-h.eta, &gp);
    GradientMessage {
        j: entry.j,
        grad: gq.to_vec(),
    }
}

/// Runs SGD over the sensor's local train entries in a seeded order against
/// the round-start `Q` and region snapshots.
///
/// Returns the updated latent vector and one message per entry.
pub fn local_round(
    sensor: &SensorState,
    q_snapshot: &Array2<f64>,
    region: &RegionSnapshot,
    h: &Hyperparams,
    order_seed: u64,
) -> Result<(Array1<f64>, Vec<GradientMessage>)> {
    if sensor.local_entries.is_empty() {
        return Err(Error::EmptyLocalData { sensor: sensor.id });
    }
    let k = sensor.p.len();
    if q_snapshot.ncols() != k || region.p_matrix.ncols() != k {
        return Err(Error::Shape {
            expected: format!("k={k}"),
            found: format!("q has {}, region has {}", q_snapshot.ncols(), region.p_matrix.ncols()),
        });
    }
    let cache = (h.z != 0.0).then(|| SmoothnessCache::new(region));
    let mut p = sensor.p.clone();
    let mut messages = Vec::with_capacity(sensor.local_entries.len());
    for idx in entry_order(order_seed, sensor.local_entries.len()) {
        let entry = &sensor.local_entries[idx];
        if entry.j >= q_snapshot.nrows() {
            return Err(Error::Index { j: entry.j, n: q_snapshot.nrows() });
        }
        messages.push(local_step(entry, &mut p, q_snapshot.row(entry.j), cache.as_ref(), h));
    }
    Ok((p, messages))
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    use super::*;
    use crate::model::Split;

    fn lone(p: Array1<f64>) -> RegionSnapshot {
        RegionSnapshot {
            p_matrix: p.insert_axis(ndarray::Axis(0)).to_owned(),
            lap_row: array![0.0],
            member_index: 0,
        }
    }

    #[test]
    fn predict_examples() {
        assert_eq!(predict_entry(array![1.0, 0.0].view(), array![0.0, 1.0].view()), 0.0);
        assert_eq!(predict_entry(array![1.0, 1.0, 1.0].view(), array![1.0, 1.0, 1.0].view()), 3.0);
        assert_eq!(predict_entry(array![0.5, 2.0].view(), array![4.0, 0.25].view()), 2.5);
    }

    #[test]
    fn loss_examples() {
        let one = array![1.0];
        assert_eq!(instantaneous_loss(1.0, one.view(), one.view(), 0.0, 0.0, 0.0), 0.0);
        assert_eq!(
            instantaneous_loss(0.0, array![1.0].view(), array![2.0].view(), 0.0, 0.5, 0.0),
            6.5
        );
        let zero = array![0.0];
        assert_eq!(instantaneous_loss(0.0, zero.view(), zero.view(), 3.0, 7.0, 1.0), 9.0);
    }

    #[test]
    fn gradients_vanish_at_fit() {
        let p = array![0.3, 0.7];
        let q = array![1.5, -0.5];
        let y = p.dot(&q);
        let snap = lone(p.clone());
        assert_eq!(grad_p(y, p.view(), &snap, q.view(), 0.0, 0.0), array![0.0, 0.0]);
        assert_eq!(grad_q(y, p.view(), &snap, q.view(), 0.0, 0.0), array![0.0, 0.0]);
    }

    #[test]
    fn scalar_gradient_examples() {
        let snap = lone(array![1.0]);
        let one = array![1.0];
        assert_eq!(grad_p(0.0, one.view(), &snap, one.view(), 0.0, 0.0), array![2.0]);
        assert_eq!(grad_q(3.0, one.view(), &snap, one.view(), 0.0, 0.0), array![-4.0]);

        // residual zero, ridge only: 2 * lambda * q
        let p = array![0.0];
        let q = array![2.0];
        assert_eq!(grad_q(0.0, p.view(), &lone(p.clone()), q.view(), 1.0, 0.0), array![4.0]);
    }

    #[test]
    fn smoothness_term_alone() {
        // lap_row . (P q^T) = 2 with q = [3]: P = [[0], [2/3]], lap_row = [0, 1]
        let snap = RegionSnapshot {
            p_matrix: array![[0.0], [2.0 / 3.0]],
            lap_row: array![0.0, 1.0],
            member_index: 0,
        };
        let p = array![0.0];
        let q = array![3.0];
        assert_abs_diff_eq!(snap.smoothness(p.view(), q.view()), 2.0, epsilon = 1e-15);
        let g = grad_p(0.0, p.view(), &snap, q.view(), 0.0, 0.5);
        assert_abs_diff_eq!(g[0], 6.0, epsilon = 1e-12);
    }

    #[test]
    fn smoothness_uses_own_current_vector() {
        let snap = RegionSnapshot {
            p_matrix: array![[1.0], [1.0]],
            lap_row: array![2.0, -1.0],
            member_index: 0,
        };
        let q = array![1.0];
        assert_eq!(snap.smoothness(array![1.0].view(), q.view()), 1.0);
        assert_eq!(snap.smoothness(array![3.0].view(), q.view()), 5.0);
        let cache = SmoothnessCache::new(&snap);
        assert_eq!(cache.value(array![3.0].view(), q.view()), 5.0);
    }

    fn sensor(p: Array1<f64>, entries: Vec<(usize, f64)>) -> SensorState {
        SensorState {
            id: 0,
            region: 0,
            p,
            local_entries: entries
                .into_iter()
                .map(|(j, y)| Entry { i: 0, j, y, split: Split::Train })
                .collect(),
        }
    }

    #[test]
    fn empty_sensor_is_rejected() {
        let s = sensor(array![1.0], vec![]);
        let r = local_round(&s, &array![[1.0]], &lone(array![1.0]), &Hyperparams { k: 1, ..Default::default() }, 0);
        assert!(matches!(r, Err(Error::EmptyLocalData { sensor: 0 })));
    }

    #[test]
    fn single_entry_round() {
        let s = sensor(array![1.0], vec![(0, 0.0)]);
        let h = Hyperparams { k: 1, lambda: 0.0, z: 0.0, eta: 0.1, ..Default::default() };
        let (p, msgs) = local_round(&s, &array![[1.0]], &lone(s.p.clone()), &h, 9).unwrap();
        assert_abs_diff_eq!(p[0], 0.8, epsilon = 1e-15);
        assert_eq!(msgs, vec![GradientMessage { j: 0, grad: vec![2.0] }]);
    }

    #[test]
    fn zero_step_keeps_p_and_still_reports() {
        let s = sensor(array![0.5, 0.5], vec![(0, 1.0), (1, 2.0), (2, -1.0)]);
        let q = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let h = Hyperparams { k: 2, lambda: 0.1, eta: 0.0, ..Default::default() };
        let (p, msgs) = local_round(&s, &q, &lone(s.p.clone()), &h, 4).unwrap();
        assert_eq!(p, s.p);
        assert_eq!(msgs.len(), 3);
        for m in &msgs {
            let e = s.local_entries.iter().find(|e| e.j == m.j).unwrap();
            let want = grad_q(e.y, s.p.view(), &lone(s.p.clone()), q.row(m.j), 0.1, 0.0);
            assert_eq!(m.grad, want.to_vec());
        }
    }
}
