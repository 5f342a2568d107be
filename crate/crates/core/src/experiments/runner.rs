//! Seeds × variants sweeps and the resulting report.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::CsvDataset;
use super::problems::{stream_rng, ProblemSpec};
use super::stats::{mean, std_dev};
use crate::autodiff::JetOrder;
use crate::error::{Result, SdoreError};
use crate::estimators::{
    derivative_norms, recover_source, rel_l2_error, rel_l2_error_grad, select_variables, selection_error,
    ThresholdRule,
};
use crate::model::{Ensemble, Model, ReQUNetwork};
use crate::training::{train, History, LabeledSet, LossSpec, TrainConfig, UnlabeledSet, Variant};

/// Tensor grid `per_axis^d` over `[lo, hi]^d`, endpoints included.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub per_axis: usize,
}

impl GridSpec {
    pub fn points(&self, d: usize) -> Result<Array2<f64>> {
        if self.per_axis < 2 || !(self.hi > self.lo) {
            return Err(SdoreError::contract("grid needs per_axis ≥ 2 and hi > lo"));
        }
        let total = (self.per_axis as f64).powi(d as i32);
        if total > 4e6 {
            return Err(SdoreError::contract(format!(
                "grid of {} points per axis in dimension {d} is too large",
                self.per_axis
            )));
        }
        let total = total as usize;
        let step = (self.hi - self.lo) / (self.per_axis - 1) as f64;
        let mut out = Array2::zeros((total, d));
        for i in 0..total {
            let mut rest = i;
            // last coordinate varies fastest
            for k in (0..d).rev() {
                out[[i, k]] = self.lo + step * (rest % self.per_axis) as f64;
                rest /= self.per_axis;
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Number of independent noisy test sets drawn from μ_X.
    pub test_sets: usize,
    pub test_size: usize,
    /// Points for the relative L² errors of `f` and `∇f`. Without a grid the
    /// pooled test covariates are used.
    pub grid: Option<GridSpec>,
    /// Grid for source recovery; only used when the truth has a source.
    pub source_grid: Option<GridSpec>,
    pub threshold: ThresholdRule,
    /// Fraction of rows used for training on tabular data.
    pub train_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            test_sets: 100,
            test_size: 100,
            grid: None,
            source_grid: None,
            threshold: ThresholdRule::default(),
            train_fraction: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Hidden widths; input and output widths come from the problem.
    pub hidden: Vec<usize>,
    /// Number of networks in the convex combination; 1 is a plain network.
    pub ensemble_size: usize,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            hidden: vec![64, 64],
            ensemble_size: 1,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn layer_dims(&self, d: usize) -> Vec<usize> {
        let mut dims = vec![d];
        dims.extend(&self.hidden);
        dims.push(1);
        dims
    }

    fn init_model(&self, d: usize, seed: u64) -> Result<Model> {
        let dims = self.layer_dims(d);
        match self.ensemble_size {
            0 => Err(SdoreError::contract("ensemble_size must be ≥ 1")),
            1 => Ok(ReQUNetwork::init(&dims, seed)?.into()),
            k => Ok(Ensemble::init(&dims, k, seed)?.into()),
        }
    }
}

/// What a sweep is run on.
#[derive(Clone, Debug)]
pub enum Problem {
    Synthetic(ProblemSpec),
    Dataset { name: String, data: CsvDataset },
}

impl Problem {
    pub fn name(&self) -> &str {
        match self {
            Problem::Synthetic(s) => &s.name,
            Problem::Dataset { name, .. } => name,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Problem::Synthetic(s) => s.dim(),
            Problem::Dataset { data, .. } => data.labeled.dim(),
        }
    }
}

/// Metrics for one (variant, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: Variant,
    pub lambda: f64,
    pub seed: u64,
    /// Mean total loss over the last training epoch.
    pub final_loss: f64,
    /// Test RMSE averaged over the test sets.
    pub rmse: f64,
    pub rel_l2_f: Option<f64>,
    pub rel_l2_grad: Option<f64>,
    pub source_error: Option<f64>,
    /// Selection error averaged over the test sets.
    pub selection_error: Option<f64>,
    /// Zero-based coordinates selected from `derivative_norms`.
    pub selected: Vec<usize>,
    pub derivative_norms: Vec<f64>,
}

impl ReportRow {
    fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "final_loss" => Some(self.final_loss),
            "rmse" => Some(self.rmse),
            "rel_l2_f" => self.rel_l2_f,
            "rel_l2_grad" => self.rel_l2_grad,
            "source_error" => self.source_error,
            "selection_error" => self.selection_error,
            _ => None,
        }
    }
}

pub const METRICS: [&str; 6] = [
    "final_loss",
    "rmse",
    "rel_l2_f",
    "rel_l2_grad",
    "source_error",
    "selection_error",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation over seeds for one variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub variant: Variant,
    pub lambda: f64,
    pub seeds: usize,
    pub metrics: Vec<MetricSummary>,
    pub mean_derivative_norms: Vec<f64>,
}

impl Aggregate {
    pub fn get(&self, metric: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == metric)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub sigma: Option<f64>,
    pub sigma_provenance: String,
    pub feature_names: Option<Vec<String>>,
    /// Sorted by variant position, then by seed position.
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<Aggregate>,
}

/// A fitted model kept alongside its report row.
#[derive(Clone, Debug)]
pub struct Fit {
    pub variant_index: usize,
    pub seed: u64,
    pub model: Model,
    pub history: History,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub fits: Vec<Fit>,
}

fn aggregate(rows: &[ReportRow], variant: &LossSpec) -> Aggregate {
    let mut metrics = Vec::new();
    for name in METRICS {
        let values: Option<Vec<f64>> = rows.iter().map(|r| r.metric(name)).collect();
        if let Some(v) = values {
            if !v.is_empty() {
                metrics.push(MetricSummary {
                    metric: name.to_string(),
                    mean: mean(&v),
                    std: std_dev(&v),
                });
            }
        }
    }
    let d = rows.first().map_or(0, |r| r.derivative_norms.len());
    let mean_derivative_norms = (0..d)
        .map(|k| mean(&rows.iter().map(|r| r.derivative_norms[k]).collect::<Vec<_>>()))
        .collect();
    Aggregate {
        variant: variant.variant,
        lambda: variant.lambda,
        seeds: rows.len(),
        metrics,
        mean_derivative_norms,
    }
}

impl ExperimentReport {
    /// Recomputes every aggregate from the rows and demands exact agreement.
    pub fn verify_aggregates(&self) -> Result<()> {
        let mut start = 0;
        for agg in &self.aggregates {
            let rows = self
                .rows
                .get(start..start + agg.seeds)
                .ok_or_else(|| SdoreError::Validation("aggregate covers missing rows".into()))?;
            if rows.iter().any(|r| r.variant != agg.variant || r.lambda.to_bits() != agg.lambda.to_bits()) {
                return Err(SdoreError::Validation(format!(
                    "rows for {} at lambda {} are out of order",
                    agg.variant.name(),
                    agg.lambda
                )));
            }
            let again = aggregate(rows, &LossSpec::new(agg.variant, agg.lambda));
            if &again != agg {
                return Err(SdoreError::Validation(format!(
                    "aggregate for {} at lambda {} does not match its rows",
                    agg.variant.name(),
                    agg.lambda
                )));
            }
            start += agg.seeds;
        }
        if start != self.rows.len() {
            return Err(SdoreError::Validation("rows not covered by any aggregate".into()));
        }
        Ok(())
    }

    pub fn aggregate_for(&self, variant: Variant, lambda: f64) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.variant == variant && a.lambda.to_bits() == lambda.to_bits())
    }

    /// One line per row; floats use shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let d = self.rows.first().map_or(0, |r| r.derivative_norms.len());
        let mut out = String::from(
            "variant,lambda,seed,final_loss,rmse,rel_l2_f,rel_l2_grad,source_error,selection_error,selected",
        );
        for k in 0..d {
            match self.feature_names.as_ref().and_then(|names| names.get(k)) {
                Some(name) => {
                    let _ = write!(out, ",norm_{name}");
                }
                None => {
                    let _ = write!(out, ",norm_{}", k + 1);
                }
            }
        }
        out.push('\n');
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
        for r in &self.rows {
            let selected: Vec<String> = r.selected.iter().map(|k| (k + 1).to_string()).collect();
            let _ = write!(
                out,
                "{},{:?},{},{:?},{:?},{},{},{},{},{}",
                r.variant.name(),
                r.lambda,
                r.seed,
                r.final_loss,
                r.rmse,
                opt(r.rel_l2_f),
                opt(r.rel_l2_grad),
                opt(r.source_error),
                opt(r.selection_error),
                selected.join(" ")
            );
            for v in &r.derivative_norms {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
        out
    }
}

struct SeedData {
    labeled: LabeledSet,
    unlabeled: Option<UnlabeledSet>,
    tests: Vec<LabeledSet>,
}

fn seed_data(problem: &Problem, sigma: f64, seed: u64, eval: &EvalConfig) -> Result<SeedData> {
    match problem {
        Problem::Synthetic(spec) => {
            let inst = spec.generate_with_sigma(seed, sigma)?;
            let tests = (0..eval.test_sets as u64)
                .map(|t| spec.test_set(sigma, eval.test_size, seed, t))
                .collect::<Result<Vec<_>>>()?;
            Ok(SeedData {
                labeled: inst.labeled,
                unlabeled: inst.unlabeled,
                tests,
            })
        }
        Problem::Dataset { data, .. } => {
            let n = data.labeled.len();
            let n_train = ((n as f64) * eval.train_fraction).round() as usize;
            if n_train == 0 || n_train >= n {
                return Err(SdoreError::contract("train_fraction leaves an empty train or test split"));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut stream_rng(seed, 5));
            let pick = |idx: &[usize]| {
                LabeledSet::new(
                    data.labeled.x.select(Axis(0), idx),
                    data.labeled.y.select(Axis(0), idx),
                )
            };
            let test = pick(&order[n_train..])?;
            Ok(SeedData {
                labeled: pick(&order[..n_train])?,
                unlabeled: Some(UnlabeledSet::new(test.x.clone())?),
                tests: vec![test],
            })
        }
    }
}

fn rmse(model: &Model, set: &LabeledSet) -> Result<f64> {
    let pred = model.predict(&set.x)?;
    let mse = (&pred - &set.y).mapv(|e| e * e).mean().unwrap_or(0.0);
    Ok(mse.sqrt())
}

fn gradients(model: &Model, x: &Array2<f64>) -> Result<Array2<f64>> {
    let jets = model.predict_jet(x, JetOrder::Gradient)?;
    let mut g = Array2::zeros(x.raw_dim());
    for (i, jet) in jets.iter().enumerate() {
        g.row_mut(i).assign(&jet.grad);
    }
    Ok(g)
}

fn run_cell(
    problem: &Problem,
    sigma: f64,
    spec: &LossSpec,
    seed: u64,
    cfg: &ExperimentConfig,
) -> Result<(ReportRow, Model, History)> {
    let data = seed_data(problem, sigma, seed, &cfg.eval)?;
    let d = problem.dim();
    let init = cfg.init_model(d, seed)?;
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let (model, history) = train(init, &data.labeled, data.unlabeled.as_ref(), spec, &train_cfg)?;
    let final_loss = history.last().map_or(f64::NAN, |r| r.total_loss);

    let rmses = data.tests.iter().map(|t| rmse(&model, t)).collect::<Result<Vec<_>>>()?;
    let pooled: Array2<f64> = if data.tests.is_empty() {
        data.labeled.x.clone()
    } else {
        let views: Vec<_> = data.tests.iter().map(|t| t.x.view()).collect();
        ndarray::concatenate(Axis(0), &views).map_err(|e| SdoreError::contract(e.to_string()))?
    };

    let mut row = ReportRow {
        variant: spec.variant,
        lambda: spec.lambda,
        seed,
        final_loss,
        rmse: if rmses.is_empty() { f64::NAN } else { mean(&rmses) },
        rel_l2_f: None,
        rel_l2_grad: None,
        source_error: None,
        selection_error: None,
        selected: Vec::new(),
        derivative_norms: Vec::new(),
    };

    let norm_points = match problem {
        Problem::Synthetic(_) => &pooled,
        Problem::Dataset { data, .. } => &data.labeled.x,
    };
    row.derivative_norms = derivative_norms(&model, norm_points)?;
    row.selected = select_variables(&row.derivative_norms, cfg.eval.threshold)?
        .relevant
        .into_iter()
        .collect();

    if let Problem::Synthetic(ps) = problem {
        let truth = &ps.truth;
        let points = match &cfg.eval.grid {
            Some(g) => g.points(d)?,
            None => pooled.clone(),
        };
        let est = model.predict(&points)?;
        row.rel_l2_f = Some(rel_l2_error(est.as_slice().expect("contiguous"), truth.values(&points).as_slice().expect("contiguous"))?);
        row.rel_l2_grad = Some(rel_l2_error_grad(&gradients(&model, &points)?, &truth.gradients(&points))?);

        if let (Some(relevant), false) = (&truth.relevant, data.tests.is_empty()) {
            let errs = data
                .tests
                .iter()
                .map(|t| {
                    let norms = derivative_norms(&model, &t.x)?;
                    let sel = select_variables(&norms, cfg.eval.threshold)?;
                    selection_error(&sel.relevant, relevant, d)
                })
                .collect::<Result<Vec<_>>>()?;
            row.selection_error = Some(mean(&errs));
        }

        if let (Some(source), Some(potential), Some(grid)) = (truth.source, truth.potential, &cfg.eval.source_grid) {
            let q = grid.points(d)?;
            let rec = recover_source(&model, &potential, &q)?;
            let exact: Vec<f64> = q.rows().into_iter().map(|r| source(&r.to_vec())).collect();
            row.source_error = Some(rel_l2_error(&rec.f_hat_values, &exact)?);
        }
    }
    Ok((row, model, history))
}

/// Trains every (variant, seed) cell and evaluates it.
///
/// Cells run on the ambient rayon pool; rows come back in (variant, seed)
/// order whatever the completion order, and each cell depends only on its
/// own seed, so the report is independent of the worker count.
pub fn run_experiment(
    problem: &Problem,
    variants: &[LossSpec],
    seeds: &[u64],
    config: &ExperimentConfig,
) -> Result<ExperimentOutcome> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(SdoreError::contract("need at least one variant and one seed"));
    }
    let distinct: BTreeSet<u64> = seeds.iter().copied().collect();
    if distinct.len() != seeds.len() {
        return Err(SdoreError::contract("seeds must be distinct"));
    }
    for v in variants {
        v.validate()?;
    }
    let (sigma, provenance) = match problem {
        Problem::Synthetic(spec) => {
            spec.validate()?;
            let (s, p) = spec.sigma();
            (Some(s), p)
        }
        Problem::Dataset { .. } => (None, "observed responses (no synthetic noise)".to_string()),
    };

    let cells: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(v, s)| run_cell(problem, sigma.unwrap_or(0.0), &variants[v], s, config))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(results.len());
    let mut fits = Vec::with_capacity(results.len());
    for (&(v, seed), (row, model, history)) in cells.iter().zip(results) {
        rows.push(row);
        fits.push(Fit {
            variant_index: v,
            seed,
            model,
            history,
        });
    }
    let aggregates = variants
        .iter()
        .enumerate()
        .map(|(v, spec)| aggregate(&rows[v * seeds.len()..(v + 1) * seeds.len()], spec))
        .collect();
    let feature_names = match problem {
        Problem::Dataset { data, .. } => Some(data.feature_names.clone()),
        Problem::Synthetic(_) => None,
    };
    Ok(ExperimentOutcome {
        report: ExperimentReport {
            experiment: problem.name().to_string(),
            sigma,
            sigma_provenance: provenance,
            feature_names,
            rows,
            aggregates,
        },
        fits,
    })
}

/// Plot data on `points`: coordinates, fitted value, fitted partials, and
/// the truth columns when a truth is known.
pub fn curve_csv(model: &Model, problem: &Problem, points: &Array2<f64>) -> Result<String> {
    let d = points.ncols();
    let est = model.predict(points)?;
    let grad = gradients(model, points)?;
    let truth = match problem {
        Problem::Synthetic(s) => Some((s.truth.values(points), s.truth.gradients(points))),
        Problem::Dataset { .. } => None,
    };
    let mut out = String::new();
    let coords: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
    out.push_str(&coords.join(","));
    out.push_str(",estimate");
    if truth.is_some() {
        out.push_str(",truth");
    }
    for k in 1..=d {
        let _ = write!(out, ",d{k}_estimate");
        if truth.is_some() {
            let _ = write!(out, ",d{k}_truth");
        }
    }
    out.push('\n');
    for i in 0..points.nrows() {
        let cells: Vec<String> = points.row(i).iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        let _ = write!(out, ",{:?}", est[i]);
        if let Some((tv, _)) = &truth {
            let _ = write!(out, ",{:?}", tv[i]);
        }
        for k in 0..d {
            let _ = write!(out, ",{:?}", grad[[i, k]]);
            if let Some((_, tg)) = &truth {
                let _ = write!(out, ",{:?}", tg[[i, k]]);
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Default plot points: the evaluation grid if any, else a line or grid over
/// the first coordinates of a test draw.
pub fn curve_points(problem: &Problem, config: &ExperimentConfig) -> Result<Array2<f64>> {
    if let Some(g) = &config.eval.grid {
        return g.points(problem.dim());
    }
    match problem {
        Problem::Synthetic(spec) => Ok(spec.test_set(0.0, 200, 0, 0)?.x),
        Problem::Dataset { data, .. } => Ok(data.labeled.x.slice(ndarray::s![..data.labeled.len().min(200), ..]).to_owned()),
    }
}

/// λ for sample size `n`, scaled from `(n0, lambda0)` by `(n / n0)^(−s/(d+4s))`.
pub fn lambda_schedule(lambda0: f64, n0: usize, n: usize, s: f64, d: usize) -> f64 {
    let exponent = -s / (d as f64 + 4.0 * s);
    lambda0 * (n as f64 / n0 as f64).powf(exponent)
}
