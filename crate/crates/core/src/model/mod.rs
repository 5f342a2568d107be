//! ReQU networks, simplex-weighted ensembles and their checkpoints.

mod checkpoint;
mod network;

use ndarray::{s, Array1, Array2};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::ReQUNetwork;

use crate::autodiff::{record_requ_stack, softmax_row, Jet, JetNodes, JetOrder, NodeId, Tape};
use crate::error::{Result, SdoreError};

/// Rows per tape when evaluating jets over large point sets.
const JET_CHUNK: usize = 1024;

/// Convex combination of networks sharing an input width.
///
/// The weights are stored as logits and mapped onto the simplex with a
/// normalized exponential, so training can update them freely.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    members: Vec<ReQUNetwork>,
    logits: Array2<f64>,
}

impl Ensemble {
    /// Builds an ensemble from explicit simplex weights. Zero weights are allowed.
    pub fn new(members: Vec<ReQUNetwork>, weights: &[f64]) -> Result<Self> {
        if members.is_empty() {
            return Err(SdoreError::contract("ensemble needs at least one member"));
        }
        if weights.len() != members.len() {
            return Err(SdoreError::contract(format!(
                "{} weights for {} members",
                weights.len(),
                members.len()
            )));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(SdoreError::contract(format!(
                "ensemble weights {weights:?} are not on the probability simplex"
            )));
        }
        let logits = Array2::from_shape_fn((1, weights.len()), |(_, k)| weights[k].ln());
        Self::from_logits(members, logits)
    }

    pub fn from_logits(members: Vec<ReQUNetwork>, logits: Array2<f64>) -> Result<Self> {
        if members.is_empty() {
            return Err(SdoreError::contract("ensemble needs at least one member"));
        }
        if logits.dim() != (1, members.len()) {
            return Err(SdoreError::contract(format!(
                "logits shape {:?} for {} members",
                logits.dim(),
                members.len()
            )));
        }
        let d = members[0].input_dim();
        if members.iter().any(|m| m.input_dim() != d) {
            return Err(SdoreError::contract("ensemble members differ in input width"));
        }
        if logits.iter().all(|l| *l == f64::NEG_INFINITY) || logits.iter().any(|l| l.is_nan()) {
            return Err(SdoreError::contract("ensemble logits do not define weights"));
        }
        Ok(Ensemble { members, logits })
    }

    /// K networks from `init_network` with consecutive seeds and uniform weights.
    pub fn init(layer_dims: &[usize], k: usize, seed: u64) -> Result<Self> {
        let members = (0..k as u64)
            .map(|j| ReQUNetwork::init(layer_dims, seed.wrapping_add(j)))
            .collect::<Result<Vec<_>>>()?;
        let logits = Array2::zeros((1, k));
        Self::from_logits(members, logits)
    }

    pub fn members(&self) -> &[ReQUNetwork] {
        &self.members
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    /// Simplex weights α.
    pub fn weights(&self) -> Vec<f64> {
        softmax_row(&self.logits).iter().copied().collect()
    }
}

/// A fitted hypothesis: one network (the default) or a convex-hull ensemble.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Network(ReQUNetwork),
    Ensemble(Ensemble),
}

impl From<ReQUNetwork> for Model {
    fn from(net: ReQUNetwork) -> Self {
        Model::Network(net)
    }
}

impl From<Ensemble> for Model {
    fn from(e: Ensemble) -> Self {
        Model::Ensemble(e)
    }
}

/// Parameter nodes of a model already placed on a tape; may be recorded
/// against several batches that share the same parameters.
#[derive(Clone, Debug)]
pub struct BoundModel {
    members: Vec<Vec<(NodeId, NodeId)>>,
    alpha: Option<NodeId>,
    input_dim: usize,
}

impl BoundModel {
    pub fn record(&self, tape: &mut Tape, x: &Array2<f64>, order: JetOrder) -> Result<JetNodes> {
        if x.ncols() != self.input_dim {
            return Err(SdoreError::Shape {
                context: "model input",
                expected: format!("{} columns", self.input_dim),
                actual: format!("{}", x.ncols()),
            });
        }
        let Some(alpha) = self.alpha else {
            return record_requ_stack(tape, &self.members[0], x, order);
        };
        let member_jets = self
            .members
            .iter()
            .map(|layers| record_requ_stack(tape, layers, x, order))
            .collect::<Result<Vec<_>>>()?;
        let pick = |j: &JetNodes, which: usize| match which {
            0 => Some(j.value),
            1 => j.grad,
            _ => j.hess,
        };
        let mut combined: [Option<NodeId>; 3] = [None; 3];
        for (which, out) in combined.iter_mut().enumerate() {
            let mut acc: Option<NodeId> = None;
            for (k, j) in member_jets.iter().enumerate() {
                let Some(node) = pick(j, which) else { continue };
                let scaled = tape.scale_by_entry(node, alpha, k)?;
                acc = Some(match acc {
                    Some(a) => tape.add(a, scaled)?,
                    None => scaled,
                });
            }
            *out = acc;
        }
        Ok(JetNodes {
            value: combined[0].expect("every member has a value node"),
            grad: combined[1],
            hess: combined[2],
            batch: x.nrows(),
            dim: x.ncols(),
        })
    }
}

impl Model {
    pub fn input_dim(&self) -> usize {
        match self {
            Model::Network(n) => n.input_dim(),
            Model::Ensemble(e) => e.members[0].input_dim(),
        }
    }

    /// Trainable tensors in slot order: member layers `(W, b)` in sequence,
    /// then the ensemble logits if any.
    pub fn parameters(&self) -> Vec<&Array2<f64>> {
        match self {
            Model::Network(n) => n.parameters(),
            Model::Ensemble(e) => {
                let mut p: Vec<&Array2<f64>> =
                    e.members.iter().flat_map(|m| m.parameters()).collect();
                p.push(&e.logits);
                p
            }
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Array2<f64>> {
        match self {
            Model::Network(n) => n.parameters_mut(),
            Model::Ensemble(e) => {
                let mut p: Vec<&mut Array2<f64>> = e
                    .members
                    .iter_mut()
                    .flat_map(|m| m.parameters_mut())
                    .collect();
                p.push(&mut e.logits);
                p
            }
        }
    }

    /// Flattened parameter vector.
    pub fn parameter_vector(&self) -> Vec<f64> {
        self.parameters()
            .into_iter()
            .flat_map(|p| p.iter().copied())
            .collect()
    }

    /// Puts the parameters on `tape`. With `trainable` they become tape
    /// parameters in slot order, otherwise constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundModel> {
        let bind_net = |tape: &mut Tape, net: &ReQUNetwork, slot: usize| {
            if trainable {
                net.bind(tape, slot)
            } else {
                Ok(net.bind_constants(tape))
            }
        };
        match self {
            Model::Network(net) => Ok(BoundModel {
                members: vec![bind_net(tape, net, 0)?],
                alpha: None,
                input_dim: net.input_dim(),
            }),
            Model::Ensemble(e) => {
                let mut slot = 0;
                let mut members = Vec::with_capacity(e.members.len());
                for m in &e.members {
                    members.push(bind_net(tape, m, slot)?);
                    slot += 2 * m.num_layers();
                }
                let alpha = if trainable {
                    let logits = tape.parameter(slot, e.logits.clone())?;
                    tape.softmax(logits)?
                } else {
                    tape.constant(softmax_row(&e.logits))
                };
                Ok(BoundModel {
                    members,
                    alpha: Some(alpha),
                    input_dim: self.input_dim(),
                })
            }
        }
    }

    /// Binds and records in one go.
    pub fn record(
        &self,
        tape: &mut Tape,
        x: &Array2<f64>,
        order: JetOrder,
        trainable: bool,
    ) -> Result<JetNodes> {
        self.bind(tape, trainable)?.record(tape, x, order)
    }

    /// Plain forward pass, one output per row of `x`.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        match self {
            Model::Network(n) => n.predict(x),
            Model::Ensemble(e) => {
                let alpha = e.weights();
                let mut out = Array1::zeros(x.nrows());
                for (m, a) in e.members.iter().zip(alpha) {
                    out.scaled_add(a, &m.predict(x)?);
                }
                Ok(out)
            }
        }
    }

    /// Per-point jets, evaluated in chunks.
    pub fn predict_jet(&self, x: &Array2<f64>, order: JetOrder) -> Result<Vec<Jet>> {
        if x.ncols() != self.input_dim() {
            return Err(SdoreError::Shape {
                context: "predict_jet",
                expected: format!("{} columns", self.input_dim()),
                actual: format!("{}", x.ncols()),
            });
        }
        let mut jets = Vec::with_capacity(x.nrows());
        let mut start = 0;
        while start < x.nrows() {
            let end = (start + JET_CHUNK).min(x.nrows());
            let chunk = x.slice(s![start..end, ..]).to_owned();
            let mut tape = Tape::new();
            let nodes = self.record(&mut tape, &chunk, order, false)?;
            jets.extend(nodes.extract(&tape));
            start = end;
        }
        Ok(jets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn linear(theta: &[f64]) -> ReQUNetwork {
        let w = Array2::from_shape_vec((1, theta.len()), theta.to_vec()).unwrap();
        ReQUNetwork::from_parts(vec![theta.len(), 1], vec![w], vec![array![[0.0]]]).unwrap()
    }

    #[test]
    fn linear_jet_has_theta_gradient() {
        let m = Model::from(linear(&[1.5, -0.5, 2.0]));
        let x = array![[0.1, 0.2, 0.3], [1.0, -1.0, 4.0]];
        for jet in m.predict_jet(&x, JetOrder::Gradient).unwrap() {
            assert_eq!(jet.grad.to_vec(), vec![1.5, -0.5, 2.0]);
        }
    }

    #[test]
    fn ensemble_of_linear_nets_mixes_gradients() {
        let e = Ensemble::new(vec![linear(&[1.0, 0.0]), linear(&[0.0, 2.0])], &[0.3, 0.7]).unwrap();
        let m = Model::from(e);
        let jets = m.predict_jet(&array![[0.4, 0.9]], JetOrder::Gradient).unwrap();
        assert!((jets[0].grad[0] - 0.3).abs() < 1e-12);
        assert!((jets[0].grad[1] - 1.4).abs() < 1e-12);
    }

    #[test]
    fn ensemble_vertex_matches_member() {
        let a = ReQUNetwork::init(&[2, 8, 1], 1).unwrap();
        let b = ReQUNetwork::init(&[2, 8, 1], 2).unwrap();
        let x = array![[0.2, 0.3], [0.9, -0.4]];
        let e = Model::from(Ensemble::new(vec![a.clone(), b], &[1.0, 0.0]).unwrap());
        assert_eq!(e.predict(&x).unwrap(), a.predict(&x).unwrap());
    }

    #[test]
    fn ensemble_weights_must_be_on_simplex() {
        let a = ReQUNetwork::init(&[1, 1], 0).unwrap();
        assert!(Ensemble::new(vec![a.clone(), a.clone()], &[0.6, 0.6]).is_err());
        assert!(Ensemble::new(vec![a.clone(), a], &[-0.1, 1.1]).is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = Model::from(ReQUNetwork::init(&[3, 4, 1], 0).unwrap());
        assert!(matches!(
            m.predict(&array![[1.0, 2.0]]),
            Err(SdoreError::Shape { .. })
        ));
        assert!(m.predict_jet(&array![[1.0]], JetOrder::Value).is_err());
    }
}
