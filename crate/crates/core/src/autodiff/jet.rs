use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::tape::{NodeId, Tape};
use crate::error::{Result, SdoreError};
use crate::model::ReQUNetwork;

/// How many input derivatives to carry through the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JetOrder {
    Value = 0,
    Gradient = 1,
    Hessian = 2,
}

impl JetOrder {
    pub fn from_u8(order: u8) -> Result<Self> {
        match order {
            0 => Ok(JetOrder::Value),
            1 => Ok(JetOrder::Gradient),
            2 => Ok(JetOrder::Hessian),
            _ => Err(SdoreError::contract(format!(
                "jet order {order} not supported (max 2)"
            ))),
        }
    }
}

/// Value, input-gradient and optional input-Hessian of a scalar network at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: Array1<f64>,
    pub hess: Option<Array2<f64>>,
}

impl Jet {
    /// Trace of the Hessian, when one was propagated.
    pub fn laplacian(&self) -> Option<f64> {
        self.hess.as_ref().map(|h| h.diag().sum())
    }
}

/// Tape handles for a batch of jets.
///
/// `grad` stacks `dim` blocks of `batch` rows (block `k` holds `D_k f`);
/// `hess` stacks one block per upper-triangular pair from [`hessian_pairs`].
#[derive(Clone, Copy, Debug)]
pub struct JetNodes {
    pub value: NodeId,
    pub grad: Option<NodeId>,
    pub hess: Option<NodeId>,
    pub batch: usize,
    pub dim: usize,
}

/// Upper-triangular index pairs `(k, l)`, `k ≤ l`, in row-major order.
pub fn hessian_pairs(dim: usize) -> Vec<(usize, usize)> {
    (0..dim).flat_map(|k| (k..dim).map(move |l| (k, l))).collect()
}

impl JetNodes {
    /// Reads the per-point jets back off the tape. Hessians are filled from
    /// the stored upper triangle and then symmetrized.
    pub fn extract(&self, tape: &Tape) -> Vec<Jet> {
        let (b, d) = (self.batch, self.dim);
        let values = tape.value(self.value);
        let grads = self.grad.map(|g| tape.value(g));
        let hess = self.hess.map(|h| tape.value(h));
        let pairs = hessian_pairs(d);
        (0..b)
            .map(|i| {
                let grad = match grads {
                    Some(g) => Array1::from_iter((0..d).map(|k| g[[k * b + i, 0]])),
                    None => Array1::zeros(0),
                };
                let hess = hess.map(|h| {
                    let mut m = Array2::zeros((d, d));
                    for (p, &(k, l)) in pairs.iter().enumerate() {
                        let v = h[[p * b + i, 0]];
                        m[[k, l]] = v;
                        m[[l, k]] = v;
                    }
                    let sym = (&m + &m.t()) * 0.5;
                    sym
                });
                Jet {
                    value: values[[i, 0]],
                    grad,
                    hess,
                }
            })
            .collect()
    }
}

/// Records a dense ReQU stack on the tape for the batch `x` (`batch × dim`).
///
/// `layers` holds `(weight, bias)` nodes; the activation follows every layer
/// except the last. Tangents obey `T' = ϱ'(z) ⊙ (T·Aᵀ)` and Hessian blocks
/// `H'_{kl} = ϱ''(z) ⊙ T_k ⊙ T_l + ϱ'(z) ⊙ (H_{kl}·Aᵀ)`, with the
/// activation derivatives themselves recorded as `2·relu(z)` and `2·[z>0]`.
pub fn record_requ_stack(
    tape: &mut Tape,
    layers: &[(NodeId, NodeId)],
    x: &Array2<f64>,
    order: JetOrder,
) -> Result<JetNodes> {
    let (batch, dim) = x.dim();
    if layers.is_empty() {
        return Err(SdoreError::contract("network has no layers"));
    }
    let in_width = tape.value(layers[0].0).ncols();
    if dim != in_width {
        return Err(SdoreError::Shape {
            context: "forward_jet",
            expected: format!("{in_width} input columns"),
            actual: format!("{dim}"),
        });
    }
    if batch == 0 {
        return Err(SdoreError::contract("empty batch"));
    }

    let pairs = hessian_pairs(dim);
    let pair_left: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let pair_right: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let tile_grad = vec![0; dim];
    let tile_hess = vec![0; pairs.len()];

    let mut h = tape.constant(x.clone());
    let mut tangent = if order >= JetOrder::Gradient {
        let mut seed = Array2::zeros((dim * batch, dim));
        for k in 0..dim {
            for i in 0..batch {
                seed[[k * batch + i, k]] = 1.0;
            }
        }
        Some(tape.constant(seed))
    } else {
        None
    };
    // None = identically zero, true of the input layer
    let mut hess: Option<NodeId> = None;

    let last = layers.len() - 1;
    for (idx, &(w, b)) in layers.iter().enumerate() {
        let z = tape.matmul_t(h, w)?;
        let z = tape.add_bias(z, b)?;
        let tz = match tangent {
            Some(t) => Some(tape.matmul_t(t, w)?),
            None => None,
        };
        let hz = match hess {
            Some(hh) => Some(tape.matmul_t(hh, w)?),
            None => None,
        };
        if idx == last {
            h = z;
            tangent = tz;
            hess = hz;
            break;
        }

        h = tape.requ(z);
        if let Some(tz) = tz {
            let relu = tape.relu(z);
            let d1 = tape.scale(relu, 2.0);
            let d1_tiled = tape.gather(d1, batch, &tile_grad)?;
            tangent = Some(tape.mul(d1_tiled, tz)?);

            if order == JetOrder::Hessian {
                let st = tape.step(z);
                let d2 = tape.scale(st, 2.0);
                let d2_tiled = tape.gather(d2, batch, &tile_hess)?;
                let left = tape.gather(tz, batch, &pair_left)?;
                let right = tape.gather(tz, batch, &pair_right)?;
                let outer = tape.mul(left, right)?;
                let curvature = tape.mul(d2_tiled, outer)?;
                hess = Some(match hz {
                    Some(hz) => {
                        let d1_pairs = tape.gather(d1, batch, &tile_hess)?;
                        let carried = tape.mul(d1_pairs, hz)?;
                        tape.add(curvature, carried)?
                    }
                    None => curvature,
                });
            }
        }
    }

    if order == JetOrder::Hessian && hess.is_none() {
        hess = Some(tape.constant(Array2::zeros((pairs.len() * batch, 1))));
    }

    Ok(JetNodes {
        value: h,
        grad: tangent,
        hess: if order == JetOrder::Hessian { hess } else { None },
        batch,
        dim,
    })
}

/// Jet of a single network at one point, with parameters recorded as constants.
pub fn forward_jet(net: &ReQUNetwork, x: &[f64], order: JetOrder) -> Result<Jet> {
    if x.len() != net.input_dim() {
        return Err(SdoreError::Shape {
            context: "forward_jet",
            expected: format!("{} coordinates", net.input_dim()),
            actual: format!("{}", x.len()),
        });
    }
    let mut tape = Tape::new();
    let layers = net.bind_constants(&mut tape);
    let point = Array2::from_shape_vec((1, x.len()), x.to_vec())
        .expect("row vector from slice");
    let nodes = record_requ_stack(&mut tape, &layers, &point, order)?;
    Ok(nodes.extract(&tape).remove(0))
}
