//! Least-squares and Sobolev-penalized objectives as tape nodes.

use ndarray::{Array1, Array2};

use crate::autodiff::{JetOrder, NodeId, Tape};
use crate::error::{Result, SdoreError};
use crate::model::BoundModel;

/// Tape handles of one objective evaluation.
///
/// `penalty` is the unweighted mean squared gradient norm; `total` is
/// `fit + λ·penalty`, or `fit` itself when λ = 0.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: NodeId,
    pub fit: NodeId,
    pub penalty: Option<NodeId>,
}

/// `1/n Σ (f(Xᵢ) − Yᵢ)²`
pub fn loss_ls(tape: &mut Tape, model: &BoundModel, x: &Array2<f64>, y: &Array1<f64>) -> Result<LossTerms> {
    let n = x.nrows();
    if n == 0 {
        return Err(SdoreError::contract("least-squares loss on an empty batch"));
    }
    if y.len() != n {
        return Err(SdoreError::Shape {
            context: "labels",
            expected: format!("{n} responses"),
            actual: format!("{}", y.len()),
        });
    }
    let jets = model.record(tape, x, JetOrder::Value)?;
    let target = tape.constant(y.clone().insert_axis(ndarray::Axis(1)));
    let residual = tape.sub(jets.value, target)?;
    let sq = tape.mul(residual, residual)?;
    let total = tape.sum(sq);
    let fit = tape.scale(total, 1.0 / n as f64);
    Ok(LossTerms {
        total: fit,
        fit,
        penalty: None,
    })
}

/// `1/m Σᵢ Σ_k |D_k f(Zᵢ)|²` over the rows of `points`.
pub fn gradient_penalty(tape: &mut Tape, model: &BoundModel, points: &Array2<f64>) -> Result<NodeId> {
    let m = points.nrows();
    if m == 0 {
        return Err(SdoreError::contract("gradient penalty on an empty point set"));
    }
    let jets = model.record(tape, points, JetOrder::Gradient)?;
    let grad = jets.grad.expect("order-1 jets carry gradients");
    let sq = tape.mul(grad, grad)?;
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / m as f64))
}

fn penalized(
    tape: &mut Tape,
    model: &BoundModel,
    x: &Array2<f64>,
    y: &Array1<f64>,
    points: &Array2<f64>,
    lambda: f64,
) -> Result<LossTerms> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(SdoreError::contract(format!("lambda must be finite and ≥ 0, got {lambda}")));
    }
    let ls = loss_ls(tape, model, x, y)?;
    if lambda == 0.0 {
        return Ok(ls);
    }
    let penalty = gradient_penalty(tape, model, points)?;
    let total = tape.combine(&[(ls.fit, 1.0), (penalty, lambda)])?;
    Ok(LossTerms {
        total,
        fit: ls.fit,
        penalty: Some(penalty),
    })
}

/// Least squares plus λ times the mean squared gradient over unlabeled covariates.
pub fn loss_sdore(
    tape: &mut Tape,
    model: &BoundModel,
    x: &Array2<f64>,
    y: &Array1<f64>,
    penalty_batch: &Array2<f64>,
    lambda: f64,
) -> Result<LossTerms> {
    penalized(tape, model, x, y, penalty_batch, lambda)
}

/// Least squares plus λ times the mean squared gradient over a fixed point
/// set standing in for the penalty measure (a grid, a sample, or the labeled
/// covariates themselves).
pub fn loss_dore(
    tape: &mut Tape,
    model: &BoundModel,
    x: &Array2<f64>,
    y: &Array1<f64>,
    nu_points: &Array2<f64>,
    lambda: f64,
) -> Result<LossTerms> {
    penalized(tape, model, x, y, nu_points, lambda)
}
