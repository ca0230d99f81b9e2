//! Matrix and coordinate files, seeded sampling masks, and normalization.
//!
//! Matrix CSV: one row per sensor, one column per time slot, no header.
//! An empty cell or `nan` marks a missing value.
//!
//! Coordinates CSV: header `sensor_id,x,y` with an optional fourth
//! `region` column that pins each sensor to a region.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Entry, ObservationStore, Split};
use crate::spatial::{CoordinateSet, SensorCoordinates};

/// Dense sensor-by-time matrix; `NaN` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMatrix {
    pub values: Array2<f64>,
}

impl RawMatrix {
    pub fn new(values: Array2<f64>) -> Self {
        Self { values }
    }

    pub fn m(&self) -> usize {
        self.values.nrows()
    }

    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let v = self.values[[i, j]];
        (!v.is_nan()).then_some(v)
    }

    /// Present cells in row-major order.
    pub fn present(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.values
            .indexed_iter()
            .filter(|(_, v)| !v.is_nan())
            .map(|((i, j), &v)| (i, j, v))
    }

    pub fn present_count(&self) -> usize {
        self.values.iter().filter(|v| !v.is_nan()).count()
    }
}

fn csv_line(pos: Option<&csv::Position>) -> usize {
    pos.map_or(0, |p| p.line() as usize)
}

pub fn parse_matrix(reader: impl Read) -> Result<RawMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut width = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let line = csv_line(rec.position());
        let expected = *width.get_or_insert(rec.len());
        if rec.len() != expected {
            return Err(Error::RaggedRow { line, expected, found: rec.len() });
        }
        for (c, field) in rec.iter().enumerate() {
            let v = if field.is_empty() || field.eq_ignore_ascii_case("nan") {
                f64::NAN
            } else {
                match field.parse::<f64>() {
                    Ok(v) if v.is_finite() => v,
                    _ => {
                        return Err(Error::Parse {
                            line,
                            column: c + 1,
                            message: format!("not a number: {field:?}"),
                        })
                    }
                }
            };
            data.push(v);
        }
        rows += 1;
    }
    let cols = match width {
        Some(w) if rows > 0 => w,
        _ => {
            return Err(Error::Parse { line: 1, column: 1, message: "empty matrix file".into() });
        }
    };
    let values = Array2::from_shape_vec((rows, cols), data).expect("rectangular by construction");
    Ok(RawMatrix { values })
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<RawMatrix> {
    parse_matrix(File::open(path)?)
}

pub fn write_matrix(path: impl AsRef<Path>, matrix: &RawMatrix) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    for row in matrix.values.rows() {
        let line: Vec<String> = row
            .iter()
            .map(|v| if v.is_nan() { String::new() } else { v.to_string() })
            .collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn parse_coords(reader: impl Read) -> Result<CoordinateSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let with_region = match names.as_slice() {
        ["sensor_id", "x", "y"] => false,
        ["sensor_id", "x", "y", "region"] => true,
        _ => {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: format!("expected header sensor_id,x,y[,region], got {}", names.join(",")),
            })
        }
    };
    let mut coords = Vec::new();
    let mut provided = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = csv_line(rec.position());
        let field = |c: usize| rec.get(c).unwrap_or("");
        let bad = |c: usize| Error::Parse {
            line,
            column: c + 1,
            message: format!("invalid value {:?}", rec.get(c).unwrap_or("")),
        };
        let id: usize = field(0).parse().map_err(|_| bad(0))?;
        let x: f64 = field(1).parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| bad(1))?;
        let y: f64 = field(2).parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| bad(2))?;
        if with_region {
            let r: usize = field(3).parse().map_err(|_| bad(3))?;
            provided.insert(id, r);
        }
        if coords.iter().any(|c: &SensorCoordinates| c.id == id) {
            return Err(Error::Parse { line, column: 1, message: format!("duplicate sensor id {id}") });
        }
        coords.push(SensorCoordinates { id, x, y });
    }
    coords.sort_by_key(|c| c.id);
    Ok(CoordinateSet {
        coords,
        provided: with_region.then_some(provided),
    })
}

pub fn load_coords(path: impl AsRef<Path>) -> Result<CoordinateSet> {
    parse_coords(File::open(path)?)
}

pub fn write_coords(path: impl AsRef<Path>, set: &CoordinateSet) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    match &set.provided {
        Some(map) => {
            out.write_record(["sensor_id", "x", "y", "region"])?;
            for c in &set.coords {
                let region = map.get(&c.id).ok_or(Error::UnassignedSensor { sensor: c.id })?;
                out.write_record([c.id.to_string(), c.x.to_string(), c.y.to_string(), region.to_string()])?;
            }
        }
        None => {
            out.write_record(["sensor_id", "x", "y"])?;
            for c in &set.coords {
                out.write_record([c.id.to_string(), c.x.to_string(), c.y.to_string()])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Which entries are scored after training.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum TestMode {
    /// Present entries left out of the sampled set.
    #[default]
    Complement,
    /// A fraction of the sampled set, held back from training.
    Holdout { fraction: f64 },
}

/// Samples `floor(rate * present)` present cells uniformly as the known set
/// and splits it into train and test according to `mode`.
pub fn make_split(matrix: &RawMatrix, sampling_rate: f64, mode: TestMode, seed: u64) -> Result<ObservationStore> {
    if !(sampling_rate > 0.0 && sampling_rate <= 1.0) {
        return Err(Error::Range(format!("sampling rate must lie in (0, 1], got {sampling_rate}")));
    }
    if let TestMode::Holdout { fraction } = mode {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Range(format!("test fraction must lie in (0, 1), got {fraction}")));
        }
    }
    let mut cells: Vec<(usize, usize, f64)> = matrix.present().collect();
    cells.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let known = (sampling_rate * cells.len() as f64).floor() as usize;
    let held = match mode {
        TestMode::Holdout { fraction } => (fraction * known as f64).round() as usize,
        TestMode::Complement => 0,
    };
    let mut entries: Vec<Entry> = cells
        .iter()
        .enumerate()
        .filter_map(|(rank, &(i, j, y))| {
            let split = match mode {
                TestMode::Holdout { .. } if rank >= known => return None,
                TestMode::Holdout { .. } if rank < held => Split::Test,
                TestMode::Complement if rank >= known => Split::Test,
                _ => Split::Train,
            };
            Some(Entry { i, j, y, split })
        })
        .collect();
    entries.sort_by_key(|e| (e.i, e.j));
    ObservationStore::new(matrix.m(), matrix.n(), entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Normalization {
    #[default]
    None,
    MinMax,
    ZScore,
}

/// Affine inverse of a fitted normalization: `x * scale + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Denormalizer {
    pub offset: f64,
    pub scale: f64,
}

impl Denormalizer {
    pub const IDENTITY: Self = Self { offset: 0.0, scale: 1.0 };

    pub fn forward(&self, y: f64) -> f64 {
        (y - self.offset) / self.scale
    }

    pub fn inverse(&self, x: f64) -> f64 {
        x * self.scale + self.offset
    }

    pub fn inverse_matrix(&self, m: &Array2<f64>) -> Array2<f64> {
        m.mapv(|x| self.inverse(x))
    }
}

/// Fits the transform on train entries only and applies it to every entry.
pub fn normalize(store: &ObservationStore, mode: Normalization) -> Result<(ObservationStore, Denormalizer)> {
    let train: Vec<f64> = store.train().map(|e| e.y).collect();
    let denorm = match mode {
        Normalization::None => return Ok((store.clone(), Denormalizer::IDENTITY)),
        _ if !train.iter().any(|&v| v != train[0]) => return Err(Error::DegenerateScale),
        Normalization::MinMax => {
            let lo = train.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = train.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Denormalizer { offset: lo, scale: hi - lo }
        }
        Normalization::ZScore => {
            let n = train.len() as f64;
            let mean = train.iter().sum::<f64>() / n;
            let var = train.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            Denormalizer { offset: mean, scale: var.sqrt() }
        }
    };
    Ok((store.map_values(|y| denorm.forward(y)), denorm))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_missing_cells() {
        let m = parse_matrix("1,2\n3,".as_bytes()).unwrap();
        assert_eq!((m.m(), m.n()), (2, 2));
        assert_eq!(m.get(0, 0), Some(1.0));
        assert_eq!(m.get(0, 1), Some(2.0));
        assert_eq!(m.get(1, 0), Some(3.0));
        assert_eq!(m.get(1, 1), None);
        let m = parse_matrix("nan, 4.5\nNaN,1e-3\n".as_bytes()).unwrap();
        assert_eq!(m.present_count(), 2);
    }

    #[test]
    fn empty_file_is_parse_error() {
        assert!(matches!(parse_matrix("".as_bytes()), Err(Error::Parse { .. })));
    }

    #[test]
    fn ragged_and_garbage_rows() {
        assert!(matches!(
            parse_matrix("1,2\n3\n".as_bytes()),
            Err(Error::RaggedRow { line: 2, expected: 2, found: 1 })
        ));
        assert!(matches!(
            parse_matrix("1,2\n3,x\n".as_bytes()),
            Err(Error::Parse { line: 2, column: 2, .. })
        ));
    }

    #[test]
    fn coords_with_and_without_regions() {
        let set = parse_coords("sensor_id,x,y\n1,3.0,4.0\n0,0,0\n".as_bytes()).unwrap();
        assert_eq!(set.coords[0], SensorCoordinates { id: 0, x: 0.0, y: 0.0 });
        assert!(set.provided.is_none());
        let set = parse_coords("sensor_id,x,y,region\n0,0,0,1\n1,1,1,0\n".as_bytes()).unwrap();
        assert_eq!(set.provided.unwrap()[&0], 1);
        assert!(parse_coords("id,x,y\n0,0,0\n".as_bytes()).is_err());
        assert!(parse_coords("sensor_id,x,y\n0,0,0\n0,1,1\n".as_bytes()).is_err());
    }

    fn full(m: usize, n: usize) -> RawMatrix {
        RawMatrix::new(Array2::from_shape_fn((m, n), |(i, j)| (i * n + j) as f64))
    }

    #[test]
    fn holdout_split_counts() {
        let s = make_split(&full(10, 10), 1.0, TestMode::Holdout { fraction: 0.2 }, 1).unwrap();
        assert_eq!(s.train_count(), 80);
        assert_eq!(s.test().count(), 20);
    }

    #[test]
    fn complement_split_counts() {
        let s = make_split(&full(10, 10), 0.35, TestMode::Complement, 1).unwrap();
        assert_eq!(s.train_count(), 35);
        assert_eq!(s.test().count(), 65);
    }

    #[test]
    fn split_is_seeded() {
        let a = make_split(&full(8, 9), 0.5, TestMode::Complement, 42).unwrap();
        let b = make_split(&full(8, 9), 0.5, TestMode::Complement, 42).unwrap();
        let c = make_split(&full(8, 9), 0.5, TestMode::Complement, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn beijing_sized_known_set() {
        // floor(0.1 * 35 * 8647)
        let s = make_split(&full(35, 8647), 0.1, TestMode::Complement, 0).unwrap();
        assert_eq!(s.train_count(), 30264);
    }

    #[test]
    fn split_ignores_missing_cells() {
        let mut m = full(4, 4);
        m.values[[0, 0]] = f64::NAN;
        m.values[[3, 2]] = f64::NAN;
        let s = make_split(&m, 1.0, TestMode::Holdout { fraction: 0.5 }, 0).unwrap();
        assert_eq!(s.entries().len(), 14);
        assert!(s.entries().iter().all(|e| (e.i, e.j) != (0, 0) && (e.i, e.j) != (3, 2)));
    }

    #[test]
    fn split_range_errors() {
        let m = full(3, 3);
        assert!(matches!(make_split(&m, 0.0, TestMode::Complement, 0), Err(Error::Range(_))));
        assert!(matches!(make_split(&m, 1.5, TestMode::Complement, 0), Err(Error::Range(_))));
        assert!(matches!(make_split(&m, 0.5, TestMode::Holdout { fraction: 1.0 }, 0), Err(Error::Range(_))));
    }

    fn store_of(values: &[f64]) -> ObservationStore {
        let entries = values
            .iter()
            .enumerate()
            .map(|(j, &y)| Entry { i: 0, j, y, split: Split::Train })
            .collect();
        ObservationStore::new(1, values.len(), entries).unwrap()
    }

    #[test]
    fn normalization_modes() {
        let s = store_of(&[3.0, 773.7]);
        let (same, d) = normalize(&s, Normalization::None).unwrap();
        assert_eq!(same, s);
        assert_eq!(d, Denormalizer::IDENTITY);

        let (mm, _) = normalize(&s, Normalization::MinMax).unwrap();
        let ys: Vec<f64> = mm.entries().iter().map(|e| e.y).collect();
        assert_eq!(ys, vec![0.0, 1.0]);

        let (z, _) = normalize(&store_of(&[1.0, 3.0]), Normalization::ZScore).unwrap();
        let ys: Vec<f64> = z.entries().iter().map(|e| e.y).collect();
        assert_eq!(ys, vec![-1.0, 1.0]);

        assert!(matches!(normalize(&store_of(&[2.0, 2.0]), Normalization::MinMax), Err(Error::DegenerateScale)));
    }

    #[test]
    fn normalization_fits_on_train_only() {
        let entries = vec![
            Entry { i: 0, j: 0, y: 0.0, split: Split::Train },
            Entry { i: 0, j: 1, y: 10.0, split: Split::Train },
            Entry { i: 0, j: 2, y: 100.0, split: Split::Test },
        ];
        let s = ObservationStore::new(1, 3, entries).unwrap();
        let (mm, d) = normalize(&s, Normalization::MinMax).unwrap();
        assert_eq!(mm.entries()[2].y, 10.0);
        assert_eq!(d.inverse(10.0), 100.0);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = full(3, 4);
        m.values[[1, 2]] = f64::NAN;
        m.values[[0, 1]] = 0.1 + 0.2;
        let path = dir.path().join("m.csv");
        write_matrix(&path, &m).unwrap();
        let back = load_matrix(&path).unwrap();
        assert_eq!(back.values.mapv(|v| v.to_bits()), m.values.mapv(|v| if v.is_nan() { f64::NAN.to_bits() } else { v.to_bits() }));

        let set = CoordinateSet {
            coords: vec![SensorCoordinates { id: 0, x: 0.5, y: -1.25 }, SensorCoordinates { id: 1, x: 2.0, y: 3.0 }],
            provided: Some([(0, 0), (1, 0)].into_iter().collect()),
        };
        let path = dir.path().join("c.csv");
        write_coords(&path, &set).unwrap();
        assert_eq!(load_coords(&path).unwrap(), set);
    }
}
