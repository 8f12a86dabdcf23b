use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Mean absolute error. The subgradient at zero is zero.
    L1,
    /// Mean squared error.
    L2,
}

pub fn loss(tape: &mut Tape, kind: LossKind, pred: Var, target: &Tensor) -> Result<Var> {
    let ps = tape.value(pred).shape();
    if ps != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "loss",
            lhs: ps.to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let t = tape.constant(target.clone());
    let diff = tape.sub(pred, t)?;
    let per = match kind {
        LossKind::L1 => tape.abs(diff),
        LossKind::L2 => tape.square(diff),
    };
    Ok(tape.mean_all(per))
}

/// Running sums for MSE and MAE over any number of blocks.
#[derive(Clone, Debug, Default)]
pub struct MetricAccumulator {
    sq: f64,
    abs: f64,
    n: usize,
}

impl MetricAccumulator {
    pub fn add(&mut self, pred: &[f64], truth: &[f64]) {
        for (p, t) in pred.iter().zip(truth) {
            let d = p - t;
            self.sq += d * d;
            self.abs += d.abs();
        }
        self.n += pred.len().min(truth.len());
    }

    pub fn count(&self) -> usize {
        self.n
    }

    /// `(mse, mae)`.
    pub fn finish(&self) -> Result<(f64, f64)> {
        if self.n == 0 {
            return Err(Error::Data("no predictions to score".into()));
        }
        Ok((self.sq / self.n as f64, self.abs / self.n as f64))
    }

    pub fn mean(&self, kind: LossKind) -> Result<f64> {
        let (mse, mae) = self.finish()?;
        Ok(match kind {
            LossKind::L1 => mae,
            LossKind::L2 => mse,
        })
    }
}

/// `(mse, mae)` over all elements.
pub fn metrics(pred: &Tensor, truth: &Tensor) -> Result<(f64, f64)> {
    if pred.shape() != truth.shape() {
        return Err(Error::ShapeMismatch {
            op: "metrics",
            lhs: pred.shape().to_vec(),
            rhs: truth.shape().to_vec(),
        });
    }
    let mut acc = MetricAccumulator::default();
    acc.add(pred.data(), truth.data());
    acc.finish()
}
