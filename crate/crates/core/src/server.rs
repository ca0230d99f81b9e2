//! Server side: fold a round of gradient messages into a sparse column
//! gradient and take one SGD step on `Q`.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::model::{GradientMessage, ServerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

/// Gradient for `Q` with only the touched columns stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGradient {
    pub n: usize,
    pub k: usize,
    pub columns: BTreeMap<usize, Array1<f64>>,
}

impl SparseGradient {
    pub fn zeros(n: usize, k: usize) -> Self {
        Self { n, k, columns: BTreeMap::new() }
    }

    pub fn column(&self, j: usize) -> Array1<f64> {
        self.columns.get(&j).cloned().unwrap_or_else(|| Array1::zeros(self.k))
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.k));
        for (&j, g) in &self.columns {
            out.row_mut(j).assign(g);
        }
        out
    }
}

fn pairwise_sum(vectors: &[&[f64]], k: usize) -> Vec<f64> {
    match vectors.len() {
        0 => vec![0.0; k],
        1 => vectors[0].to_vec(),
        len => {
            let (a, b) = vectors.split_at(len / 2);
            let (a, b) = (pairwise_sum(a, k), pairwise_sum(b, k));
            a.iter().zip(&b).map(|(x, y)| x + y).collect()
        }
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Per-column sum or mean of the messages.
///
/// Each column's gradients are put in a canonical order and summed
/// pairwise, so the result does not depend on message arrival order.
pub fn aggregate(messages: &[GradientMessage], n: usize, k: usize, reduction: Reduction) -> Result<SparseGradient> {
    let mut by_column: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
    for m in messages {
        if m.j >= n {
            return Err(Error::Index { j: m.j, n });
        }
        if m.grad.len() != k {
            return Err(Error::Shape {
                expected: format!("gradient of length {k}"),
                found: format!("length {}", m.grad.len()),
            });
        }
        by_column.entry(m.j).or_default().push(&m.grad);
    }
    let columns = by_column
        .into_iter()
        .map(|(j, mut grads)| {
            grads.sort_by(|a, b| lex_cmp(a, b));
            let mut total = Array1::from(pairwise_sum(&grads, k));
            if reduction == Reduction::Mean {
                total /= grads.len() as f64;
            }
            (j, total)
        })
        .collect();
    Ok(SparseGradient { n, k, columns })
}

fn check_row(q: &Array2<f64>, j: usize, k: usize) -> Result<()> {
    if j >= q.nrows() {
        return Err(Error::Index { j, n: q.nrows() });
    }
    if q.ncols() != k {
        return Err(Error::Shape {
            expected: format!("k={}", q.ncols()),
            found: format!("k={k}"),
        });
    }
    Ok(())
}

/// `Q <- Q - eta * agg` and advance the round counter. The state is left
/// untouched if any updated entry would be non-finite.
pub fn apply_update(mut server: ServerState, agg: &SparseGradient, eta: f64) -> Result<ServerState> {
    if agg.n != server.q.nrows() {
        return Err(Error::Shape {
            expected: format!("n={}", server.q.nrows()),
            found: format!("n={}", agg.n),
        });
    }
    let mut staged = Vec::with_capacity(agg.columns.len());
    for (&j, g) in &agg.columns {
        check_row(&server.q, j, g.len())?;
        let row = &server.q.row(j) - &(g * eta);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { column: j });
        }
        staged.push((j, row));
    }
    for (j, row) in staged {
        server.q.row_mut(j).assign(&row);
    }
    server.round += 1;
    Ok(server)
}

/// Applies one message immediately, without touching the round counter.
pub fn apply_message(server: &mut ServerState, msg: &GradientMessage, eta: f64) -> Result<()> {
    check_row(&server.q, msg.j, msg.grad.len())?;
    let mut row = server.q.row_mut(msg.j);
    let updated: Vec<f64> = row.iter().zip(&msg.grad).map(|(q, g)| q - eta * g).collect();
    if updated.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { column: msg.j });
    }
    row.assign(&Array1::from(updated));
    Ok(())
}
