//! Objectives, optimizers and the minibatch training loop.

mod adam;
mod loss;

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use ndarray::{concatenate, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, sgd_step, AdamConfig, AdamState};
pub use loss::{gradient_penalty, loss_dore, loss_ls, loss_sdore, LossTerms};

use crate::autodiff::Tape;
use crate::error::{Result, SdoreError};
use crate::model::Model;

/// Labeled pairs `(Xᵢ, Yᵢ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

impl LabeledSet {
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(SdoreError::contract(format!(
                "{} covariate rows but {} responses",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(SdoreError::contract("labeled set has non-finite entries"));
        }
        Ok(LabeledSet { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
}

/// Unlabeled covariates `Zᵢ`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledSet {
    pub z: Array2<f64>,
}

impl UnlabeledSet {
    pub fn new(z: Array2<f64>) -> Result<Self> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(SdoreError::contract("unlabeled set has non-finite entries"));
        }
        Ok(UnlabeledSet { z })
    }

    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Plain least squares.
    Ls,
    /// Penalty over a user-supplied point set, or over the labeled covariates
    /// when none is given.
    Dore,
    /// Penalty over the unlabeled sample.
    Sdore,
    /// Penalty over labeled and unlabeled covariates pooled, weight λ/(n+m).
    SdorePooled,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Ls => "ls",
            Variant::Dore => "dore",
            Variant::Sdore => "sdore",
            Variant::SdorePooled => "sdore_pooled",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossSpec {
    pub variant: Variant,
    pub lambda: f64,
    /// Points representing the penalty measure for [`Variant::Dore`].
    pub nu_points: Option<Arc<Array2<f64>>>,
}

impl LossSpec {
    pub fn new(variant: Variant, lambda: f64) -> Self {
        LossSpec {
            variant,
            lambda,
            nu_points: None,
        }
    }

    pub fn with_nu_points(mut self, points: Array2<f64>) -> Self {
        self.nu_points = Some(Arc::new(points));
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(SdoreError::contract(format!(
                "lambda must be finite and ≥ 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
    /// Plain gradient descent.
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStopping {
    pub patience: usize,
    #[serde(default)]
    pub min_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub optimizer: Optimizer,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub lr_decay: Option<f64>,
    pub early_stopping: Option<EarlyStopping>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 1000,
            seed: 0,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            optimizer: Optimizer::Adam,
            lr_decay: None,
            early_stopping: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (b1, b2) = self.adam_betas;
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(SdoreError::contract("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(SdoreError::contract("adam betas must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(SdoreError::contract("batch_size must be at least 1"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(SdoreError::contract("adam_eps must be positive"));
        }
        if let Some(g) = self.lr_decay {
            if !(g > 0.0 && g <= 1.0) {
                return Err(SdoreError::contract("lr_decay must lie in (0, 1]"));
            }
        }
        Ok(())
    }

    fn adam(&self, learning_rate: f64) -> AdamConfig {
        AdamConfig {
            learning_rate,
            beta1: self.adam_betas.0,
            beta2: self.adam_betas.1,
            eps: self.adam_eps,
        }
    }
}

/// Per-epoch averages over the optimizer steps of that epoch.
///
/// `penalty_term` is the weighted contribution λ·mean‖∇f‖², so
/// `total_loss = fit_term + penalty_term`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total_loss: f64,
    pub fit_term: f64,
    pub penalty_term: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub const CSV_HEADER: &'static str = "epoch,total_loss,fit_term,penalty_term";

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.epochs {
            writeln!(
                out,
                "{},{:e},{:e},{:e}",
                r.epoch, r.total_loss, r.fit_term, r.penalty_term
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| SdoreError::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| SdoreError::io(path, e))
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Endless reshuffled stream of row batches.
struct RowStream {
    rows: Array2<f64>,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl RowStream {
    fn new(rows: Array2<f64>, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut order: Vec<usize> = (0..rows.nrows()).collect();
        order.shuffle(&mut rng);
        RowStream {
            rows,
            order,
            cursor: 0,
            rng,
        }
    }

    /// Next `size` rows (capped at the pool size), reshuffling on wrap-around.
    fn next_batch(&mut self, size: usize) -> Array2<f64> {
        let size = size.min(self.order.len());
        let mut idx = Vec::with_capacity(size);
        while idx.len() < size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            idx.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        self.rows.select(Axis(0), &idx)
    }
}

enum PenaltyFeed {
    None,
    LabeledBatch,
    Stream(RowStream),
}

const LABELED_STREAM: u64 = 0;
const PENALTY_STREAM: u64 = 1;

/// Fits `model` by minibatch descent on the objective selected by `spec`.
///
/// Each epoch shuffles the labeled set and walks it in `batch_size` chunks.
/// Penalty points come from their own shuffled stream of the same batch size,
/// cycled independently of the labeled stream.
pub fn train(
    mut model: Model,
    labeled: &LabeledSet,
    unlabeled: Option<&UnlabeledSet>,
    spec: &LossSpec,
    config: &TrainConfig,
) -> Result<(Model, History)> {
    spec.validate()?;
    config.validate()?;
    if labeled.is_empty() {
        return Err(SdoreError::contract("training needs at least one labeled pair"));
    }
    let d = model.input_dim();
    if labeled.dim() != d {
        return Err(SdoreError::Shape {
            context: "labeled covariates",
            expected: format!("{d} columns"),
            actual: format!("{}", labeled.dim()),
        });
    }
    if let Some(u) = unlabeled {
        if u.dim() != d {
            return Err(SdoreError::Shape {
                context: "unlabeled covariates",
                expected: format!("{d} columns"),
                actual: format!("{}", u.dim()),
            });
        }
    }

    let need_unlabeled = |what: &str| -> Result<&UnlabeledSet> {
        match unlabeled {
            Some(u) if !u.is_empty() => Ok(u),
            _ => Err(SdoreError::contract(format!("{what} requires a nonempty unlabeled set"))),
        }
    };
    let mut feed = if spec.lambda == 0.0 {
        PenaltyFeed::None
    } else {
        match spec.variant {
            Variant::Ls => PenaltyFeed::None,
            Variant::Dore => match &spec.nu_points {
                Some(p) => {
                    if p.nrows() == 0 || p.ncols() != d {
                        return Err(SdoreError::contract("DORE penalty points are empty or misshaped"));
                    }
                    PenaltyFeed::Stream(RowStream::new((**p).clone(), config.seed, PENALTY_STREAM))
                }
                None => PenaltyFeed::LabeledBatch,
            },
            Variant::Sdore => PenaltyFeed::Stream(RowStream::new(
                need_unlabeled("SDORE")?.z.clone(),
                config.seed,
                PENALTY_STREAM,
            )),
            Variant::SdorePooled => {
                let u = need_unlabeled("pooled SDORE")?;
                let pool = concatenate![Axis(0), labeled.x.view(), u.z.view()];
                PenaltyFeed::Stream(RowStream::new(pool, config.seed, PENALTY_STREAM))
            }
        }
    };
    let lambda = match spec.variant {
        Variant::Ls => 0.0,
        _ => spec.lambda,
    };

    let n = labeled.len();
    let batch = config.batch_size.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(LABELED_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    let mut adam = AdamState::new(&model.parameters());
    let mut lr = config.learning_rate;
    let mut history = History::default();
    let mut best = f64::INFINITY;
    let mut stale = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut sum_total, mut sum_fit, mut sum_pen, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(batch) {
            let xb = labeled.x.select(Axis(0), chunk);
            let yb = labeled.y.select(Axis(0), chunk);
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true)?;
            let terms = match &mut feed {
                PenaltyFeed::None => loss_ls(&mut tape, &bound, &xb, &yb)?,
                PenaltyFeed::LabeledBatch => loss_dore(&mut tape, &bound, &xb, &yb, &xb, lambda)?,
                PenaltyFeed::Stream(s) => {
                    let pb = s.next_batch(batch);
                    loss_sdore(&mut tape, &bound, &xb, &yb, &pb, lambda)?
                }
            };
            let total = tape.scalar(terms.total)?;
            if !total.is_finite() {
                return Err(SdoreError::Numerical(format!(
                    "loss became {total} at epoch {epoch}"
                )));
            }
            let fit = tape.scalar(terms.fit)?;
            sum_total += total;
            sum_fit += fit;
            sum_pen += total - fit;
            steps += 1;

            let grads = tape.backward(terms.total)?;
            let mut params = model.parameters_mut();
            match config.optimizer {
                Optimizer::Adam => adam_step(&mut adam, &mut params, &grads, &config.adam(lr))?,
                Optimizer::Sgd => sgd_step(&mut params, &grads, lr)?,
            }
        }
        let k = steps as f64;
        let record = EpochRecord {
            epoch,
            total_loss: sum_total / k,
            fit_term: sum_fit / k,
            penalty_term: sum_pen / k,
        };
        history.epochs.push(record);

        if let Some(g) = config.lr_decay {
            lr *= g;
        }
        if let Some(es) = config.early_stopping {
            if record.total_loss < best - es.min_delta {
                best = record.total_loss;
                stale = 0;
            } else {
                stale += 1;
                if stale > es.patience {
                    break;
                }
            }
        }
    }
    Ok((model, history))
}

/// Objective value on full data sets, without minibatching.
pub fn evaluate_objective(
    model: &Model,
    labeled: &LabeledSet,
    penalty_points: Option<&Array2<f64>>,
    lambda: f64,
) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false)?;
    let terms = match penalty_points {
        Some(p) => loss_sdore(&mut tape, &bound, &labeled.x, &labeled.y, p, lambda)?,
        None => loss_ls(&mut tape, &bound, &labeled.x, &labeled.y)?,
    };
    let total = tape.scalar(terms.total)?;
    let fit = tape.scalar(terms.fit)?;
    Ok((total, total - fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ReQUNetwork;
    use ndarray::array;

    fn toy() -> (LabeledSet, UnlabeledSet) {
        let x = Array2::from_shape_fn((20, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 10.0);
        let y = x.column(0).mapv(|a| a * a) + &x.column(1);
        let z = Array2::from_shape_fn((30, 2), |(i, j)| ((i * 5 + j) % 13) as f64 / 12.0);
        (LabeledSet::new(x, y).unwrap(), UnlabeledSet::new(z).unwrap())
    }

    #[test]
    fn identical_runs_agree() {
        let (l, u) = toy();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 7,
            learning_rate: 1e-2,
            seed: 3,
            ..TrainConfig::default()
        };
        let spec = LossSpec::new(Variant::Sdore, 1e-2);
        let net = Model::from(ReQUNetwork::init(&[2, 8, 8, 1], 1).unwrap());
        let (a, ha) = train(net.clone(), &l, Some(&u), &spec, &cfg).unwrap();
        let (b, hb) = train(net, &l, Some(&u), &spec, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert_eq!(ha.epochs.len(), 5);
    }

    #[test]
    fn sdore_without_unlabeled_fails() {
        let (l, _) = toy();
        let net = Model::from(ReQUNetwork::init(&[2, 4, 1], 0).unwrap());
        let res = train(net, &l, None, &LossSpec::new(Variant::Sdore, 0.1), &TrainConfig::default());
        assert!(matches!(res, Err(SdoreError::Contract(_))));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { adam_betas: (1.0, 0.9), ..TrainConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
        assert!(LossSpec::new(Variant::Dore, -1.0).validate().is_err());
    }

    #[test]
    fn history_components_add_up() {
        let (l, u) = toy();
        let cfg = TrainConfig { epochs: 3, batch_size: 8, seed: 1, ..TrainConfig::default() };
        let net = Model::from(ReQUNetwork::init(&[2, 6, 1], 2).unwrap());
        let (_, h) = train(net, &l, Some(&u), &LossSpec::new(Variant::SdorePooled, 0.5), &cfg).unwrap();
        for r in &h.epochs {
            assert!((r.total_loss - r.fit_term - r.penalty_term).abs() < 1e-12);
            assert!(r.penalty_term > 0.0);
        }
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(History::CSV_HEADER));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn row_stream_cycles_every_row() {
        let rows = array![[0.0], [1.0], [2.0], [3.0], [4.0]];
        let mut s = RowStream::new(rows, 9, 1);
        let mut seen: Vec<f64> = (0..5).flat_map(|_| s.next_batch(1).into_iter().collect::<Vec<_>>()).collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.next_batch(12).nrows(), 5);
    }
}
