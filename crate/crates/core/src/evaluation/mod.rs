//! Recovery metrics, the centralized reference solver, and the
//! sampling-rate sweep.

mod sweep;

use std::time::Instant;

use ndarray::Array2;

pub use self::sweep::{
    original_scale_rmse, read_report, run_sweep, run_sweep_on, write_report, CellFailure, ModelKind, SweepConfig, SweepReport, SweepRow,
};
use crate::error::{Error, Result};
use crate::model::{validate_hyperparams, Entry, Hyperparams, ObservationStore};
use crate::orchestrator::{RoundRecord, TrainedModel, TrainingHistory};
use crate::schedule::{entry_order, init_factors, order_seed, ConvergenceMonitor};

/// Root mean squared error of `prediction` over the given entries.
pub fn rmse<'a>(test: impl IntoIterator<Item = &'a Entry>, prediction: &Array2<f64>) -> Result<f64> {
    mean_square_root(test.into_iter().map(|e| e.y - prediction[[e.i, e.j]]))
}

/// RMSE of `P Q^T` over the entries, without materializing the product.
pub fn factor_rmse<'a>(entries: impl IntoIterator<Item = &'a Entry>, p: &Array2<f64>, q: &Array2<f64>) -> Result<f64> {
    mean_square_root(entries.into_iter().map(|e| e.y - p.row(e.i).dot(&q.row(e.j))))
}

fn mean_square_root(residuals: impl Iterator<Item = f64>) -> Result<f64> {
    let (sum, count) = residuals.fold((0.0, 0usize), |(s, c), r| (s + r * r, c + 1));
    if count == 0 {
        return Err(Error::EmptyTestSet);
    }
    Ok((sum / count as f64).sqrt())
}

/// Plain per-entry SGD on the ridge-regularized squared loss over all train
/// entries, with both factors updated after every entry.
///
/// Uses the same initial factors, entry schedule and stopping rule as the
/// federated trainer. `h.z` and `h.aggregation` are ignored.
pub fn centralized_train(store: &ObservationStore, h: &Hyperparams) -> Result<TrainedModel> {
    let h = validate_hyperparams(h.clone(), store)?;
    let (mut p, mut q) = init_factors(store.m(), store.n(), h.k, h.init_scale, h.seed);
    let rows = store.train_by_sensor();
    let train: Vec<Entry> = rows.iter().flatten().copied().collect();
    let test: Vec<Entry> = store.test().copied().collect();
    let mut history = TrainingHistory::default();
    if h.max_rounds == 0 {
        return Ok(TrainedModel { p, q, history });
    }
    let mut monitor = ConvergenceMonitor::new(h.convergence_tol, factor_rmse(&train, &p, &q)?);
    for round in 1..=h.max_rounds {
        let start = Instant::now();
        for (i, row) in rows.iter().enumerate() {
            for idx in entry_order(order_seed(h.seed, round, i), row.len()) {
                let e = &row[idx];
                let (pi, qj) = (p.row(i), q.row(e.j));
                let err = e.y - pi.dot(&qj);
                let gp = &qj * (-2.0 * err) + &pi * (2.0 * h.lambda);
                let gq = &pi * (-2.0 * err) + &qj * (2.0 * h.lambda);
                p.row_mut(i).scaled_add(-h.eta, &gp);
                q.row_mut(e.j).scaled_add(-h.eta, &gq);
            }
        }
        if p.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Divergence { round });
        }
        let train_rmse = factor_rmse(&train, &p, &q)?;
        history.records.push(RoundRecord {
            round,
            train_rmse,
            test_rmse: factor_rmse(&test, &p, &q).ok(),
            seconds: start.elapsed().as_secs_f64(),
        });
        if monitor.observe(train_rmse) {
            break;
        }
    }
    Ok(TrainedModel { p, q, history })
}
