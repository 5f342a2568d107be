//! Reverse-mode tape over dense `f64` matrices.
//!
//! Every node holds its forward value. The primitive set is exactly what a
//! ReQU multilayer network needs when its input-Jacobian and input-Hessian
//! are propagated alongside the value: matrix products, bias broadcasts,
//! the activation and its derivatives, elementwise products, row-block
//! gathers (used to tile per-point quantities across stacked tangents) and
//! scalar reductions.
//!
//! Row-block convention: a matrix with `k * b` rows may be viewed as `k`
//! blocks of `b` rows each. Stacked tangents use block `j` for input
//! direction `j`, so the `i`-th row of block `j` belongs to batch point `i`.

use ndarray::{s, Array2, Axis, Zip};

use super::{relu, requ, requ_prime, step};
use crate::error::{Result, SdoreError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Parameter,
    /// `a · wᵀ`
    MatMulT { a: NodeId, w: NodeId },
    /// `a + 1·bias`, bias is `1 × cols`
    AddBias { a: NodeId, bias: NodeId },
    Requ(NodeId),
    Relu(NodeId),
    /// Heaviside `[z > 0]`; treated as locally constant by the reverse sweep.
    Step(NodeId),
    Mul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Output block `j` is input block `blocks[j]`.
    Gather {
        a: NodeId,
        block_rows: usize,
        blocks: Vec<usize>,
    },
    /// Sum of all entries, `1 × 1`.
    Sum(NodeId),
    /// `Σ cᵢ·xᵢ` over same-shape operands.
    Combine(Vec<(NodeId, f64)>),
    /// Normalized exponential of a `1 × k` row.
    Softmax(NodeId),
    /// `a · s[0, index]`
    ScaleByEntry { a: NodeId, s: NodeId, index: usize },
}

impl Op {
    fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Constant | Op::Parameter => vec![],
            Op::MatMulT { a, w } => vec![*a, *w],
            Op::AddBias { a, bias } => vec![*a, *bias],
            Op::Requ(a) | Op::Relu(a) | Op::Step(a) | Op::Scale(a, _) | Op::Sum(a) => vec![*a],
            Op::Softmax(a) => vec![*a],
            Op::Mul(a, b) | Op::Add(a, b) | Op::Sub(a, b) => vec![*a, *b],
            Op::Gather { a, .. } => vec![*a],
            Op::Combine(terms) => terms.iter().map(|(n, _)| *n).collect(),
            Op::ScaleByEntry { a, s, .. } => vec![*a, *s],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Array2<f64>,
}

/// Append-only computation record.
#[derive(Clone, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    /// parameter slot -> leaf node
    params: Vec<Option<NodeId>>,
    requ_prime: fn(f64) -> f64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Parameter gradients indexed by parameter slot.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads(pub Vec<Array2<f64>>);

impl ParamGrads {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, slot: usize) -> &Array2<f64> {
        &self.0[slot]
    }

    /// Concatenation of every gradient in slot order, row-major.
    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|g| g.iter().copied()).collect()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            requ_prime,
        }
    }

    /// Replaces the derivative used when back-propagating through [`Op::Requ`].
    /// Only meant for mutation tests of the gradient checker.
    #[doc(hidden)]
    pub fn with_requ_prime(mut self, f: fn(f64) -> f64) -> Self {
        self.requ_prime = f;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let v = self.value(id);
        if v.dim() != (1, 1) {
            return Err(SdoreError::contract(format!(
                "node {} is {:?}, not scalar",
                id.0,
                v.dim()
            )));
        }
        Ok(v[[0, 0]])
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> NodeId {
        debug_assert!(op.operands().iter().all(|o| o.0 < self.nodes.len()));
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(Op::Constant, value)
    }

    /// Registers a trainable leaf under `slot`. Each slot may be bound once.
    pub fn parameter(&mut self, slot: usize, value: Array2<f64>) -> Result<NodeId> {
        if self.params.len() <= slot {
            self.params.resize(slot + 1, None);
        }
        if self.params[slot].is_some() {
            return Err(SdoreError::contract(format!(
                "parameter slot {slot} bound twice"
            )));
        }
        let id = self.push(Op::Parameter, value);
        self.params[slot] = Some(id);
        Ok(id)
    }

    pub fn matmul_t(&mut self, a: NodeId, w: NodeId) -> Result<NodeId> {
        let (av, wv) = (self.value(a), self.value(w));
        if av.ncols() != wv.ncols() {
            return Err(SdoreError::Shape {
                context: "matmul_t",
                expected: format!("{} columns", wv.ncols()),
                actual: format!("{:?}", av.dim()),
            });
        }
        let value = av.dot(&wv.t());
        Ok(self.push(Op::MatMulT { a, w }, value))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.nrows() != 1 || bv.ncols() != av.ncols() {
            return Err(SdoreError::Shape {
                context: "add_bias",
                expected: format!("(1, {})", av.ncols()),
                actual: format!("{:?}", bv.dim()),
            });
        }
        let value = av + bv;
        Ok(self.push(Op::AddBias { a, bias }, value))
    }

    pub fn requ(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(requ);
        self.push(Op::Requ(a), value)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(relu);
        self.push(Op::Relu(a), value)
    }

    pub fn step(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(step);
        self.push(Op::Step(a), value)
    }

    fn check_same(&self, context: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (da, db) = (self.value(a).dim(), self.value(b).dim());
        if da != db {
            return Err(SdoreError::Shape {
                context,
                expected: format!("{da:?}"),
                actual: format!("{db:?}"),
            });
        }
        Ok(())
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same("mul", a, b)?;
        let value = self.value(a) * self.value(b);
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same("add", a, b)?;
        let value = self.value(a) + self.value(b);
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same("sub", a, b)?;
        let value = self.value(a) - self.value(b);
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a) * c;
        self.push(Op::Scale(a, c), value)
    }

    /// Assembles a matrix out of `block_rows`-row blocks of `a`.
    pub fn gather(&mut self, a: NodeId, block_rows: usize, blocks: &[usize]) -> Result<NodeId> {
        let av = self.value(a);
        if block_rows == 0 || av.nrows() % block_rows != 0 {
            return Err(SdoreError::contract(format!(
                "gather: {} rows not divisible into blocks of {block_rows}",
                av.nrows()
            )));
        }
        let available = av.nrows() / block_rows;
        if let Some(bad) = blocks.iter().find(|&&b| b >= available) {
            return Err(SdoreError::contract(format!(
                "gather: block {bad} out of range ({available} blocks)"
            )));
        }
        let mut value = Array2::zeros((blocks.len() * block_rows, av.ncols()));
        for (j, &b) in blocks.iter().enumerate() {
            value
                .slice_mut(s![j * block_rows..(j + 1) * block_rows, ..])
                .assign(&av.slice(s![b * block_rows..(b + 1) * block_rows, ..]));
        }
        Ok(self.push(
            Op::Gather {
                a,
                block_rows,
                blocks: blocks.to_vec(),
            },
            value,
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total = self.value(a).sum();
        self.push(Op::Sum(a), Array2::from_elem((1, 1), total))
    }

    pub fn combine(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let Some(&(first, _)) = terms.first() else {
            return Err(SdoreError::contract("combine: no terms"));
        };
        for &(n, _) in &terms[1..] {
            self.check_same("combine", first, n)?;
        }
        let mut value = Array2::zeros(self.value(first).raw_dim());
        for &(n, c) in terms {
            value.scaled_add(c, self.value(n));
        }
        Ok(self.push(Op::Combine(terms.to_vec()), value))
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if av.nrows() != 1 {
            return Err(SdoreError::contract("softmax expects a single row"));
        }
        let value = softmax_row(av);
        Ok(self.push(Op::Softmax(a), value))
    }

    pub fn scale_by_entry(&mut self, a: NodeId, s: NodeId, index: usize) -> Result<NodeId> {
        let sv = self.value(s);
        if sv.nrows() != 1 || index >= sv.ncols() {
            return Err(SdoreError::contract(format!(
                "scale_by_entry: index {index} outside {:?}",
                sv.dim()
            )));
        }
        let c = sv[[0, index]];
        let value = self.value(a) * c;
        Ok(self.push(Op::ScaleByEntry { a, s, index }, value))
    }

    /// Reverse sweep from a scalar node. The result has one entry per bound
    /// parameter slot; slots the loss does not depend on get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<ParamGrads> {
        if loss.0 >= self.nodes.len() {
            return Err(SdoreError::contract(format!("unknown node {}", loss.0)));
        }
        if self.value(loss).dim() != (1, 1) {
            return Err(SdoreError::contract(format!(
                "backward needs a scalar loss, node {} is {:?}",
                loss.0,
                self.value(loss).dim()
            )));
        }
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Parameter => {
                    adj[i] = Some(g);
                }
                Op::MatMulT { a, w } => {
                    let av = self.value(*a);
                    let wv = self.value(*w);
                    accumulate(&mut adj, *a, g.dot(wv));
                    accumulate(&mut adj, *w, g.t().dot(av));
                }
                Op::AddBias { a, bias } => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut adj, *bias, gb);
                    accumulate(&mut adj, *a, g);
                }
                Op::Requ(a) => {
                    let rp = self.requ_prime;
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|gi, &z| *gi *= rp(z));
                    accumulate(&mut adj, *a, ga);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|gi, &z| *gi *= step(z));
                    accumulate(&mut adj, *a, ga);
                }
                Op::Step(_) => {}
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *b, g.clone());
                    accumulate(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, -&g);
                    accumulate(&mut adj, *a, g);
                }
                Op::Scale(a, c) => accumulate(&mut adj, *a, g * *c),
                Op::Gather {
                    a,
                    block_rows,
                    blocks,
                } => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    for (j, &b) in blocks.iter().enumerate() {
                        let mut dst = ga.slice_mut(s![b * block_rows..(b + 1) * block_rows, ..]);
                        dst += &g.slice(s![j * block_rows..(j + 1) * block_rows, ..]);
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                    accumulate(&mut adj, *a, ga);
                }
                Op::Combine(terms) => {
                    for &(n, c) in terms {
                        accumulate(&mut adj, n, &g * c);
                    }
                }
                Op::Softmax(a) => {
                    let p = &node.value;
                    let dot = (&g * p).sum();
                    let ga = p * &(g - dot);
                    accumulate(&mut adj, *a, ga);
                }
                Op::ScaleByEntry { a, s, index } => {
                    let sv = self.value(*s);
                    let c = sv[[0, *index]];
                    let mut gs = Array2::zeros(sv.raw_dim());
                    gs[[0, *index]] = (&g * self.value(*a)).sum();
                    accumulate(&mut adj, *s, gs);
                    accumulate(&mut adj, *a, g * c);
                }
            }
        }

        let grads = self
            .params
            .iter()
            .map(|slot| match slot {
                Some(id) if id.0 < adj.len() => adj[id.0]
                    .take()
                    .unwrap_or_else(|| Array2::zeros(self.value(*id).raw_dim())),
                Some(id) => Array2::zeros(self.value(*id).raw_dim()),
                None => Array2::zeros((0, 0)),
            })
            .collect();
        Ok(ParamGrads(grads))
    }
}

fn accumulate(adj: &mut [Option<Array2<f64>>], id: NodeId, g: Array2<f64>) {
    match &mut adj[id.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn softmax_row(row: &Array2<f64>) -> Array2<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e = row.mapv(|x| (x - max).exp());
    let total = e.sum();
    e /= total;
    e
}
