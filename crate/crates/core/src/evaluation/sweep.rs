use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::{load_coords, load_matrix, make_split, normalize, Normalization, RawMatrix, TestMode};
use crate::error::{Error, Result};
use crate::model::Hyperparams;
use crate::orchestrator::{self, TrainedModel};
use crate::spatial::CoordinateSet;

use super::centralized_train;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    Centralized,
    Federated,
}

impl ModelKind {
    pub const ALL: [ModelKind; 2] = [ModelKind::Centralized, ModelKind::Federated];
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Centralized => "centralized",
            ModelKind::Federated => "flfl-ssr",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centralized" => Ok(ModelKind::Centralized),
            "flfl-ssr" => Ok(ModelKind::Federated),
            other => Err(Error::Range(format!("unknown model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub rates: Vec<f64>,
    pub repeats: usize,
    /// `hyper.seed` is the base seed; repeat `r` uses `seed + r`.
    pub hyper: Hyperparams,
    pub test_mode: TestMode,
    pub normalization: Normalization,
    pub models: Vec<ModelKind>,
    /// When false the `seconds` column is written as zero so that reports
    /// from identical configurations compare byte for byte.
    pub record_timing: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            rates: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            repeats: 5,
            hyper: Hyperparams::default(),
            test_mode: TestMode::Complement,
            normalization: Normalization::None,
            models: ModelKind::ALL.to_vec(),
            record_timing: true,
        }
    }
}

/// Test RMSE statistics of one model at one sampling rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rate: f64,
    pub model: ModelKind,
    pub mean_rmse: f64,
    /// Sample standard deviation over repeats; zero for a single repeat.
    pub std_rmse: f64,
    /// Mean number of rounds run.
    pub rounds: f64,
    /// Mean wall-clock training time.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub rate: f64,
    pub repeat: usize,
    pub model: Option<ModelKind>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<CellFailure>,
}

impl SweepReport {
    pub fn row(&self, rate: f64, model: ModelKind) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.rate == rate && r.model == model)
    }
}

struct CellResult {
    rmse: f64,
    rounds: usize,
    seconds: f64,
}

/// Test RMSE with predictions mapped back through `denorm`.
pub fn original_scale_rmse(
    model: &TrainedModel,
    test: &[crate::model::Entry],
    denorm: &crate::data_io::Denormalizer,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let sum: f64 = test
        .iter()
        .map(|e| {
            let r = e.y - denorm.inverse(model.p.row(e.i).dot(&model.q.row(e.j)));
            r * r
        })
        .sum();
    Ok((sum / test.len() as f64).sqrt())
}

fn run_cell(
    matrix: &RawMatrix,
    coords: &CoordinateSet,
    cfg: &SweepConfig,
    rate: f64,
    repeat: usize,
) -> Vec<(ModelKind, std::result::Result<CellResult, String>)> {
    let seed = cfg.hyper.seed.wrapping_add(repeat as u64);
    let prepared = make_split(matrix, rate, cfg.test_mode, seed).and_then(|store| {
        let test: Vec<_> = store.test().copied().collect();
        if test.is_empty() {
            return Err(Error::EmptyTestSet);
        }
        let (scaled, denorm) = normalize(&store, cfg.normalization)?;
        Ok((scaled, test, denorm))
    });
    let (store, test, denorm) = match prepared {
        Ok(p) => p,
        Err(e) => return cfg.models.iter().map(|&m| (m, Err(e.to_string()))).collect(),
    };
    let h = Hyperparams { seed, ..cfg.hyper.clone() };
    cfg.models
        .iter()
        .map(|&kind| {
            let start = Instant::now();
            let trained = match kind {
                ModelKind::Centralized => centralized_train(&store, &h),
                ModelKind::Federated => orchestrator::train(&store, coords, &h),
            };
            let outcome = trained
                .and_then(|model| {
                    let rmse = original_scale_rmse(&model, &test, &denorm)?;
                    Ok(CellResult {
                        rmse,
                        rounds: model.history.len(),
                        seconds: if cfg.record_timing { start.elapsed().as_secs_f64() } else { 0.0 },
                    })
                })
                .map_err(|e| e.to_string());
            (kind, outcome)
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return if xs.is_empty() { f64::NAN } else { 0.0 };
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Runs every `rate x repeat` cell for every configured model.
///
/// A failing cell is recorded and the sweep moves on; a rate where every
/// repeat failed gets a row of NaNs.
pub fn run_sweep_on(matrix: &RawMatrix, coords: &CoordinateSet, cfg: &SweepConfig) -> Result<SweepReport> {
    if cfg.repeats == 0 {
        return Err(Error::Range("repeats must be >= 1".into()));
    }
    if let Some(r) = cfg.rates.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
        return Err(Error::Range(format!("sampling rate {r} outside (0, 1]")));
    }
    let cells: Vec<(f64, usize)> = cfg
        .rates
        .iter()
        .flat_map(|&rate| (0..cfg.repeats).map(move |rep| (rate, rep)))
        .collect();
    let outcomes: Vec<_> = cells
        .par_iter()
        .map(|&(rate, rep)| (rate, rep, run_cell(matrix, coords, cfg, rate, rep)))
        .collect();

    let mut report = SweepReport::default();
    for &rate in &cfg.rates {
        for &model in &cfg.models {
            let mut rmse = Vec::new();
            let mut rounds = Vec::new();
            let mut seconds = Vec::new();
            for (r, rep, results) in outcomes.iter().filter(|(r, _, _)| *r == rate) {
                for (kind, outcome) in results.iter().filter(|(k, _)| *k == model) {
                    match outcome {
                        Ok(c) => {
                            rmse.push(c.rmse);
                            rounds.push(c.rounds as f64);
                            seconds.push(c.seconds);
                        }
                        Err(message) => report.failures.push(CellFailure {
                            rate: *r,
                            repeat: *rep,
                            model: Some(*kind),
                            message: message.clone(),
                        }),
                    }
                }
            }
            report.rows.push(SweepRow {
                rate,
                model,
                mean_rmse: mean(&rmse),
                std_rmse: sample_std(&rmse),
                rounds: mean(&rounds),
                seconds: mean(&seconds),
            });
        }
    }
    Ok(report)
}

/// Loads the inputs, runs the sweep, and writes the CSV report.
pub fn run_sweep(
    matrix_path: impl AsRef<Path>,
    coords_path: impl AsRef<Path>,
    cfg: &SweepConfig,
    out_path: impl AsRef<Path>,
) -> Result<SweepReport> {
    let matrix = load_matrix(matrix_path)?;
    let coords = load_coords(coords_path)?;
    let report = run_sweep_on(&matrix, &coords, cfg)?;
    write_report(out_path, &report.rows)?;
    Ok(report)
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub const REPORT_HEADER: [&str; 6] = ["rate", "model", "mean_rmse", "std_rmse", "rounds", "seconds"];

pub fn write_report(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        w.write_record([
            fmt_f64(r.rate),
            r.model.to_string(),
            fmt_f64(r.mean_rmse),
            fmt_f64(r.std_rmse),
            fmt_f64(r.rounds),
            fmt_f64(r.seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if !headers.iter().eq(REPORT_HEADER) {
        return Err(Error::Parse { line: 1, column: 1, message: "unexpected report header".into() });
    }
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let num = |c: usize| {
                rec[c].parse::<f64>().map_err(|e| Error::Parse { line, column: c + 1, message: e.to_string() })
            };
            Ok(SweepRow {
                rate: num(0)?,
                model: rec[1].parse()?,
                mean_rmse: num(2)?,
                std_rmse: num(3)?,
                rounds: num(4)?,
                seconds: num(5)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::exact_low_rank;
    use crate::spatial::SensorCoordinates;

    fn coords(m: usize) -> CoordinateSet {
        CoordinateSet {
            coords: (0..m).map(|id| SensorCoordinates { id, x: id as f64, y: (id * id % 7) as f64 }).collect(),
            provided: None,
        }
    }

    fn cfg() -> SweepConfig {
        SweepConfig {
            rates: vec![0.5],
            repeats: 3,
            hyper: Hyperparams { k: 2, eta: 0.01, max_rounds: 20, ..Default::default() },
            record_timing: false,
            ..Default::default()
        }
    }

    #[test]
    fn full_sampling_in_complement_mode_records_failure() {
        let m = exact_low_rank(8, 10, 2, 0);
        let report = run_sweep_on(&m, &coords(8), &SweepConfig { rates: vec![1.0, 0.5], ..cfg() }).unwrap();
        assert_eq!(report.failures.len(), 2 * 3);
        assert!(report.failures.iter().all(|f| f.rate == 1.0));
        assert!(report.row(1.0, ModelKind::Federated).unwrap().mean_rmse.is_nan());
        assert!(report.row(0.5, ModelKind::Federated).unwrap().mean_rmse.is_finite());
    }

    #[test]
    fn std_over_repeats() {
        assert_eq!(sample_std(&[1.0, 3.0]), 2f64.sqrt());
        assert_eq!(sample_std(&[5.0]), 0.0);
        let m = exact_low_rank(8, 10, 2, 0);
        let report = run_sweep_on(&m, &coords(8), &SweepConfig { repeats: 5, ..cfg() }).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert!(report.rows.iter().all(|r| r.std_rmse > 0.0 && r.rounds == 20.0));
    }

    #[test]
    fn report_round_trip_is_exact() {
        let rows = vec![
            SweepRow { rate: 0.1, model: ModelKind::Federated, mean_rmse: 1.0 / 3.0, std_rmse: 2e-17, rounds: 12.5, seconds: 0.1 + 0.2 },
            SweepRow { rate: 0.9, model: ModelKind::Centralized, mean_rmse: f64::MAX, std_rmse: 0.0, rounds: 500.0, seconds: 1e-300 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_report(&path, &rows).unwrap();
        assert_eq!(read_report(&path).unwrap(), rows);
    }
}
