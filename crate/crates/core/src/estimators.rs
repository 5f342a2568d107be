//! Consumers of a fitted model: derivative norms, variable selection,
//! source recovery for `−Δu + w·u = f`, and relative L² errors.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Jet, JetOrder};
use crate::error::{Result, SdoreError};
use crate::model::Model;

/// `norms[k] = sqrt(mean_i (D_k f(Zᵢ))²)`
pub fn derivative_norms(model: &Model, sample: &Array2<f64>) -> Result<Vec<f64>> {
    if sample.nrows() == 0 {
        return Err(SdoreError::contract("derivative norms need a nonempty sample"));
    }
    let jets = model.predict_jet(sample, JetOrder::Gradient)?;
    let d = model.input_dim();
    let mut sums = vec![0.0; d];
    for jet in &jets {
        for (s, g) in sums.iter_mut().zip(jet.grad.iter()) {
            *s += g * g;
        }
    }
    let m = jets.len() as f64;
    Ok(sums.into_iter().map(|s| (s / m).sqrt()).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdRule {
    /// τ = c · max_k norms[k]
    Relative { c: f64 },
    Absolute { tau: f64 },
    /// Keep the k largest; τ is the (k+1)-th largest norm.
    TopK { k: usize },
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::Relative { c: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub norms: Vec<f64>,
    pub threshold: f64,
    /// Zero-based coordinate indices with `norms[k] > threshold`.
    pub relevant: BTreeSet<usize>,
}

pub fn select_variables(norms: &[f64], rule: ThresholdRule) -> Result<SelectionResult> {
    if norms.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(SdoreError::contract("norms must be finite and nonnegative"));
    }
    let max = norms.iter().copied().fold(0.0, f64::max);
    let threshold = match rule {
        ThresholdRule::Relative { c } => c * max,
        ThresholdRule::Absolute { tau } => tau,
        ThresholdRule::TopK { k } => {
            let mut sorted = norms.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            sorted.get(k).copied().unwrap_or(0.0)
        }
    };
    let relevant = norms
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > threshold)
        .map(|(k, _)| k)
        .collect();
    Ok(SelectionResult {
        norms: norms.to_vec(),
        threshold,
        relevant,
    })
}

/// Mean of the false positive rate and the false negative rate.
pub fn selection_error(predicted: &BTreeSet<usize>, truth: &BTreeSet<usize>, d: usize) -> Result<f64> {
    if truth.is_empty() || truth.len() >= d {
        return Err(SdoreError::contract(format!(
            "selection error undefined for a truth set of size {} out of {d}",
            truth.len()
        )));
    }
    if let Some(k) = predicted.iter().chain(truth).find(|&&k| k >= d) {
        return Err(SdoreError::contract(format!("index {k} outside 0..{d}")));
    }
    let false_pos = predicted.difference(truth).count() as f64;
    let false_neg = truth.difference(predicted).count() as f64;
    let fpr = false_pos / (d - truth.len()) as f64;
    let fnr = false_neg / truth.len() as f64;
    Ok(0.5 * (fpr + fnr))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceRecovery {
    pub points: Vec<Vec<f64>>,
    pub u_hat: Vec<f64>,
    pub potential: Vec<f64>,
    pub laplacian: Vec<f64>,
    pub f_hat_values: Vec<f64>,
}

/// `f̂(q) = −Δû(q) + w(q)·û(q)` from jets that carry Hessians.
pub fn recover_source_from_jets(
    jets: &[Jet],
    w: &dyn Fn(&[f64]) -> f64,
    points: &Array2<f64>,
) -> Result<SourceRecovery> {
    if jets.len() != points.nrows() {
        return Err(SdoreError::contract(format!(
            "{} jets for {} query points",
            jets.len(),
            points.nrows()
        )));
    }
    let mut out = SourceRecovery {
        points: Vec::with_capacity(jets.len()),
        u_hat: Vec::with_capacity(jets.len()),
        potential: Vec::with_capacity(jets.len()),
        laplacian: Vec::with_capacity(jets.len()),
        f_hat_values: Vec::with_capacity(jets.len()),
    };
    for (jet, q) in jets.iter().zip(points.rows()) {
        let lap = jet.laplacian().ok_or_else(|| {
            SdoreError::Capability("source recovery needs second-order jets".into())
        })?;
        let q = q.to_vec();
        let wq = w(&q);
        out.f_hat_values.push(-lap + wq * jet.value);
        out.u_hat.push(jet.value);
        out.potential.push(wq);
        out.laplacian.push(lap);
        out.points.push(q);
    }
    Ok(out)
}

pub fn recover_source(
    model: &Model,
    w: &dyn Fn(&[f64]) -> f64,
    query_points: &Array2<f64>,
) -> Result<SourceRecovery> {
    let jets = model.predict_jet(query_points, JetOrder::Hessian)?;
    recover_source_from_jets(&jets, w, query_points)
}

/// `‖e − t‖₂ / ‖t‖₂`
pub fn rel_l2_error(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(SdoreError::contract(format!(
            "{} estimates for {} truth values",
            estimate.len(),
            truth.len()
        )));
    }
    let num: f64 = estimate.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum();
    let den: f64 = truth.iter().map(|t| t * t).sum();
    if den == 0.0 {
        return Err(SdoreError::Numerical("relative error against a zero truth".into()));
    }
    Ok((num / den).sqrt())
}

/// Relative L² error of gradient fields, rows are points.
pub fn rel_l2_error_grad(estimate: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    if estimate.dim() != truth.dim() {
        return Err(SdoreError::contract(format!(
            "gradient shapes {:?} and {:?} differ",
            estimate.dim(),
            truth.dim()
        )));
    }
    rel_l2_error(
        &estimate.iter().copied().collect::<Vec<_>>(),
        &truth.iter().copied().collect::<Vec<_>>(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ReQUNetwork;
    use ndarray::array;
    use proptest::prelude::*;

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn relative_rule_example() {
        let r = select_variables(&[1.0, 0.9, 0.01, 0.02], ThresholdRule::default()).unwrap();
        assert_eq!(r.relevant, set(&[0, 1]));
        assert!((r.threshold - 0.1).abs() < 1e-15);
    }

    #[test]
    fn equal_norms_are_all_relevant() {
        let r = select_variables(&[0.3; 5], ThresholdRule::default()).unwrap();
        assert_eq!(r.relevant.len(), 5);
    }

    #[test]
    fn all_zero_norms_select_nothing() {
        let r = select_variables(&[0.0; 4], ThresholdRule::default()).unwrap();
        assert!(r.relevant.is_empty());
    }

    #[test]
    fn top_k_and_absolute_rules() {
        let norms = [0.5, 2.0, 0.1, 1.0];
        let r = select_variables(&norms, ThresholdRule::TopK { k: 2 }).unwrap();
        assert_eq!(r.relevant, set(&[1, 3]));
        let r = select_variables(&norms, ThresholdRule::Absolute { tau: 0.4 }).unwrap();
        assert_eq!(r.relevant, set(&[0, 1, 3]));
    }

    #[test]
    fn selection_error_examples() {
        let truth = set(&[0, 1, 2, 3]);
        assert_eq!(selection_error(&truth, &truth, 20).unwrap(), 0.0);
        assert_eq!(selection_error(&set(&[]), &truth, 20).unwrap(), 0.5);
        let got = selection_error(&set(&[0, 1, 2, 4]), &truth, 20).unwrap();
        assert!((got - 0.15625).abs() < 1e-15);
        assert!(selection_error(&truth, &set(&[]), 20).is_err());
        assert!(selection_error(&truth, &(0..20).collect(), 20).is_err());
    }

    #[test]
    fn derivative_norms_of_linear_and_constant_models() {
        let w = array![[1.0, 0.0, 0.0]];
        let net = ReQUNetwork::from_parts(vec![3, 1], vec![w], vec![array![[0.4]]]).unwrap();
        let z = Array2::from_shape_fn((10, 3), |(i, j)| (i + j) as f64 * 0.1);
        let norms = derivative_norms(&Model::from(net), &z).unwrap();
        assert_eq!(norms, vec![1.0, 0.0, 0.0]);

        let constant = ReQUNetwork::zeros(&[3, 4, 1]).unwrap();
        assert_eq!(derivative_norms(&Model::from(constant), &z).unwrap(), vec![0.0; 3]);
        assert!(derivative_norms(&Model::from(ReQUNetwork::zeros(&[3, 1]).unwrap()), &Array2::zeros((0, 3))).is_err());
    }

    #[test]
    fn recovery_of_constant_and_linear_models() {
        let q = array![[0.2, 0.3], [0.9, 0.1]];
        let w = |_: &[f64]| 5.0;
        let c = ReQUNetwork::from_parts(vec![2, 1], vec![array![[0.0, 0.0]]], vec![array![[2.0]]]).unwrap();
        let rec = recover_source(&Model::from(c), &w, &q).unwrap();
        assert_eq!(rec.f_hat_values, vec![10.0, 10.0]);

        let lin = ReQUNetwork::from_parts(vec![2, 1], vec![array![[1.0, -2.0]]], vec![array![[0.0]]]).unwrap();
        let wq = |p: &[f64]| 1.0 + p[0];
        let rec = recover_source(&Model::from(lin), &wq, &q).unwrap();
        for (i, p) in q.rows().into_iter().enumerate() {
            let expected = (1.0 + p[0]) * (p[0] - 2.0 * p[1]);
            assert!((rec.f_hat_values[i] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn first_order_jets_cannot_recover_source() {
        let net = Model::from(ReQUNetwork::init(&[2, 3, 1], 0).unwrap());
        let q = array![[0.1, 0.2]];
        let jets = net.predict_jet(&q, JetOrder::Gradient).unwrap();
        assert!(matches!(
            recover_source_from_jets(&jets, &|_| 1.0, &q),
            Err(SdoreError::Capability(_))
        ));
    }

    #[test]
    fn rel_l2_examples() {
        let t = [1.0, -2.0, 3.0];
        assert_eq!(rel_l2_error(&t, &t).unwrap(), 0.0);
        let doubled: Vec<f64> = t.iter().map(|v| 2.0 * v).collect();
        assert!((rel_l2_error(&doubled, &t).unwrap() - 1.0).abs() < 1e-15);
        assert!(rel_l2_error(&[1.0], &[0.0]).is_err());

        let k = 100_000;
        let truth: Vec<f64> = (0..k)
            .map(|i| (2.0 * std::f64::consts::PI * (i as f64 + 0.5) / k as f64).sin())
            .collect();
        let shifted: Vec<f64> = truth.iter().map(|v| v + 0.1).collect();
        let err = rel_l2_error(&shifted, &truth).unwrap();
        assert!((err - 0.1 / 0.5f64.sqrt()).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn threshold_monotonicity(norms in prop::collection::vec(0.0f64..10.0, 1..12), t1 in 0.0f64..10.0, dt in 0.0f64..5.0) {
            let a = select_variables(&norms, ThresholdRule::Absolute { tau: t1 }).unwrap();
            let b = select_variables(&norms, ThresholdRule::Absolute { tau: t1 + dt }).unwrap();
            prop_assert!(b.relevant.is_subset(&a.relevant));
        }

        #[test]
        fn relative_rule_is_scale_free(norms in prop::collection::vec(0.0f64..10.0, 1..12), c in 0.01f64..100.0) {
            let a = select_variables(&norms, ThresholdRule::default()).unwrap();
            let scaled: Vec<f64> = norms.iter().map(|v| v * c).collect();
            let b = select_variables(&scaled, ThresholdRule::default()).unwrap();
            prop_assert_eq!(a.relevant, b.relevant);
        }

        #[test]
        fn selection_error_in_unit_interval(pred in prop::collection::btree_set(0usize..10, 0..10), truth in prop::collection::btree_set(0usize..10, 1..9)) {
            let e = selection_error(&pred, &truth, 10).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
            prop_assert_eq!(e == 0.0, pred == truth);
        }
    }
}
