//! Region partitioning and per-region sensor graphs.
//!
//! Each region gets a distance matrix over its members, a top-k nearest
//! neighbour adjacency weighted by inverse squared distance, the graph
//! Laplacian `L = D - W`, and the product `L L^T` used by the sensor-side
//! smoothness gradient.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorCoordinates {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

/// Sensor positions plus an optional externally supplied region map.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSet {
    pub coords: Vec<SensorCoordinates>,
    pub provided: Option<BTreeMap<usize, usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionGraph {
    pub h: usize,
    /// Sensor ids in ascending order; matrix row `c` belongs to `members[c]`.
    pub members: Vec<usize>,
    pub w: Array2<f64>,
    pub lap: Array2<f64>,
    pub lap_sq: Array2<f64>,
}

impl RegionGraph {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn position(&self, sensor: usize) -> Option<usize> {
        self.members.binary_search(&sensor).ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PartitionMode<'a> {
    /// Recursive median splits of the most populous cell along its longer
    /// bounding-box axis.
    Grid,
    Provided(&'a BTreeMap<usize, usize>),
}

/// Assigns every sensor to one of `regions` non-empty regions.
pub fn partition_regions(
    coords: &[SensorCoordinates],
    regions: usize,
    mode: PartitionMode<'_>,
) -> Result<BTreeMap<usize, usize>> {
    if regions == 0 {
        return Err(Error::Range("region count must be >= 1".into()));
    }
    let assignment = match mode {
        PartitionMode::Provided(map) => {
            let known: BTreeMap<usize, ()> = coords.iter().map(|c| (c.id, ())).collect();
            if let Some((&sensor, _)) = map.iter().find(|(s, _)| !known.contains_key(s)) {
                return Err(Error::UnknownSensor { sensor });
            }
            if let Some(c) = coords.iter().find(|c| !map.contains_key(&c.id)) {
                return Err(Error::UnassignedSensor { sensor: c.id });
            }
            if let Some((_, &r)) = map.iter().find(|(_, &r)| r >= regions) {
                return Err(Error::Range(format!("region id {r} not below H={regions}")));
            }
            map.clone()
        }
        PartitionMode::Grid => grid_partition(coords, regions)?,
    };
    let mut counts = vec![0usize; regions];
    for &r in assignment.values() {
        counts[r] += 1;
    }
    if let Some(region) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyRegion { region });
    }
    Ok(assignment)
}

fn grid_partition(coords: &[SensorCoordinates], regions: usize) -> Result<BTreeMap<usize, usize>> {
    if regions > coords.len() {
        return Err(Error::EmptyRegion { region: coords.len() });
    }
    let mut cells: Vec<Vec<SensorCoordinates>> = vec![coords.to_vec()];
    while cells.len() < regions {
        // lowest index wins ties so the split sequence is deterministic
        let (idx, _) = cells
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.len().cmp(&b.len()).then(ib.cmp(ia)))
            .expect("at least one cell");
        let mut cell = cells.swap_remove(idx);
        let (lo_x, hi_x) = span(cell.iter().map(|c| c.x));
        let (lo_y, hi_y) = span(cell.iter().map(|c| c.y));
        if hi_x - lo_x >= hi_y - lo_y {
            cell.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.id.cmp(&b.id)));
        } else {
            cell.sort_by(|a, b| a.y.total_cmp(&b.y).then(a.id.cmp(&b.id)));
        }
        let upper = cell.split_off(cell.len() / 2);
        cells.push(cell);
        cells.push(upper);
    }
    cells.sort_by_key(|c| c.iter().map(|s| s.id).min());
    Ok(cells
        .iter()
        .enumerate()
        .flat_map(|(r, cell)| cell.iter().map(move |s| (s.id, r)))
        .collect())
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Pairwise Euclidean distances between `members`, in member order.
pub fn distance_matrix(members: &[usize], coords: &[SensorCoordinates]) -> Result<Array2<f64>> {
    let lookup: BTreeMap<usize, &SensorCoordinates> = coords.iter().map(|c| (c.id, c)).collect();
    let pos = members
        .iter()
        .map(|&s| lookup.get(&s).copied().ok_or(Error::MissingCoordinate { sensor: s }))
        .collect::<Result<Vec<_>>>()?;
    let n = pos.len();
    let mut f = Array2::zeros((n, n));
    for a in 0..n {
        for b in (a + 1)..n {
            let d = (pos[a].x - pos[b].x).hypot(pos[a].y - pos[b].y);
            f[[a, b]] = d;
            f[[b, a]] = d;
        }
    }
    Ok(f)
}

/// Top-k inverse-square-distance adjacency, symmetrized by elementwise max.
///
/// Distance ties at the top-k boundary go to the lower member index.
pub fn adjacency(f: &Array2<f64>, top_k: usize) -> Result<Array2<f64>> {
    let n = f.nrows();
    if f.ncols() != n {
        return Err(Error::Shape {
            expected: format!("{n}x{n}"),
            found: format!("{}x{}", n, f.ncols()),
        });
    }
    if top_k >= n.max(1) {
        return Err(Error::Range(format!("top_k={top_k} must be below region size {n}")));
    }
    let mut w = Array2::zeros((n, n));
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&c| c != i).collect();
        others.sort_by(|&a, &b| f[[i, a]].total_cmp(&f[[i, b]]).then(a.cmp(&b)));
        for &c in others.iter().take(top_k) {
            let d = f[[i, c]];
            if d <= 0.0 {
                return Err(Error::CoincidentSensors { a: i.min(c), b: i.max(c) });
            }
            w[[i, c]] = 1.0 / (d * d);
        }
    }
    for i in 0..n {
        for c in (i + 1)..n {
            let v = w[[i, c]].max(w[[c, i]]);
            w[[i, c]] = v;
            w[[c, i]] = v;
        }
        w[[i, i]] = 0.0;
    }
    Ok(w)
}

/// `L = D - W` with `D` the diagonal of row sums.
pub fn laplacian(w: &Array2<f64>) -> Result<Array2<f64>> {
    let n = w.nrows();
    if w.ncols() != n {
        return Err(Error::Shape {
            expected: format!("{n}x{n}"),
            found: format!("{}x{}", n, w.ncols()),
        });
    }
    for i in 0..n {
        for c in 0..n {
            let (a, b) = (w[[i, c]], w[[c, i]]);
            if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                return Err(Error::Asymmetry { row: i, col: c });
            }
            if a < 0.0 {
                return Err(Error::Range(format!("negative weight at ({i}, {c})")));
            }
        }
    }
    let mut lap = w.mapv(|v| -v);
    for i in 0..n {
        let off: f64 = (0..n).filter(|&c| c != i).map(|c| w[[i, c]]).sum();
        lap[[i, i]] = off;
    }
    Ok(lap)
}

/// `L L^T`.
pub fn laplacian_square(lap: &Array2<f64>) -> Array2<f64> {
    lap.dot(&lap.t())
}

/// Builds every region's graph. `top_k` is clamped to `C_h - 1` in regions
/// smaller than `top_k + 1`.
pub fn build_region_graphs(
    coords: &[SensorCoordinates],
    assignment: &BTreeMap<usize, usize>,
    top_k: usize,
) -> Result<Vec<RegionGraph>> {
    let regions = assignment.values().copied().max().map_or(0, |r| r + 1);
    let mut members = vec![Vec::new(); regions];
    for (&sensor, &r) in assignment {
        members[r].push(sensor);
    }
    let largest = members.iter().map(Vec::len).max().unwrap_or(0);
    if top_k >= largest.max(1) && largest > 1 {
        return Err(Error::Range(format!(
            "top_k={top_k} must be below the largest region size {largest}"
        )));
    }
    members
        .into_iter()
        .enumerate()
        .map(|(h, members)| {
            if members.is_empty() {
                return Err(Error::EmptyRegion { region: h });
            }
            let f = distance_matrix(&members, coords)?;
            let w = if members.len() > 1 {
                adjacency(&f, top_k.min(members.len() - 1))?
            } else {
                Array2::zeros((1, 1))
            };
            let lap = laplacian(&w)?;
            let lap_sq = laplacian_square(&lap);
            Ok(RegionGraph { h, members, w, lap, lap_sq })
        })
        .collect()
}
