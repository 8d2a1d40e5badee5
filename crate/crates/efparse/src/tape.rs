//! Reverse-mode autodiff over a Wengert tape.
//!
//! Operations are recorded on a [`Tape`] and evaluated eagerly, so every
//! node's value is computed exactly once at push time. [`Tape::backward`]
//! replays the tape in reverse, accumulating gradients additively so shared
//! subgraphs receive summed contributions. Tapes are short-lived: training
//! rebuilds one per sentence, parsing one per sentence.

use std::collections::HashMap;

use thiserror::Error;

use crate::params::ParameterStore;
use crate::tensor::{add_matmul_a_bt, add_matmul_at_b, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("backward needs a 1x1 loss, got {0}x{1}")]
    NonScalarLoss(usize, usize),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("gradient check: the graph contains no parameter nodes")]
    NoParameters,
    #[error("gradient check: builder is non-deterministic (forward passes disagree: {0} vs {1})")]
    NonDeterministicBuilder(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// One recorded operation. Inputs are earlier tape positions, so the tape
/// order is already a topological order.
#[derive(Debug, Clone)]
enum Op {
    Parameter(String),
    Constant,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    /// Stack inputs vertically (same column count).
    ConcatRows(Vec<NodeId>),
    /// Stack inputs horizontally (same row count).
    ConcatCols(Vec<NodeId>),
    /// Elementwise sum of same-shaped inputs; empty list is the zero tensor.
    SumList(Vec<NodeId>),
    /// Per-row max over columns, yielding a column vector.
    RowMaxPool(NodeId),
    /// w @ x + b
    Affine { w: NodeId, x: NodeId, b: NodeId },
    /// Row `row` of the input, returned as a column vector.
    SelectRow(NodeId, usize),
}

pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Tensor>,
    grads: Vec<Option<Tensor>>,
    param_ids: HashMap<String, NodeId>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            ops: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            param_ids: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        debug_assert!(value.is_finite(), "non-finite value out of {op:?}");
        let id = NodeId(self.ops.len());
        self.ops.push(op);
        self.values.push(value);
        self.grads.push(None);
        id
    }

    /// The eagerly computed value of a node. The root's value is the result
    /// of the forward pass.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    /// Forward result for the (sub)graph rooted at `root`. Values are
    /// computed once at construction; this returns the stored root value.
    pub fn forward(&self, root: NodeId) -> &Tensor {
        self.value(root)
    }

    /// Gradient of the most recent backward pass, if the node received one.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    // ----- leaf constructors ---------------------------------------------

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value)
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    /// Record a named parameter from the store. Repeated requests for the
    /// same name return the same node so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<NodeId, AutodiffError> {
        if let Some(&id) = self.param_ids.get(name) {
            return Ok(id);
        }
        let value = store
            .get(name)
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))?
            .clone();
        let id = self.push(Op::Parameter(name.to_string()), value);
        self.param_ids.insert(name.to_string(), id);
        Ok(id)
    }

    // ----- recorded operations -------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let value = self.values[a.0].matmul(&self.values[b.0])?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let value = self.values[a.0].add(&self.values[b.0])?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let value = self.values[a.0].mul(&self.values[b.0])?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.values[x.0].map(f64::tanh);
        self.push(Op::Tanh(x), value)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.values[x.0].map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(Op::Sigmoid(x), value)
    }

    pub fn concat_rows(&mut self, inputs: &[NodeId]) -> Result<NodeId, TensorError> {
        if inputs.is_empty() {
            return Err(TensorError::EmptyInput { op: "concat-rows" });
        }
        let cols = self.values[inputs[0].0].cols();
        let mut rows = 0;
        for &id in inputs {
            let v = &self.values[id.0];
            if v.cols() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat-rows",
                    lhs: (rows, cols),
                    rhs: v.shape(),
                });
            }
            rows += v.rows();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &id in inputs {
            data.extend_from_slice(self.values[id.0].data());
        }
        let value = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows(inputs.to_vec()), value))
    }

    pub fn concat_cols(&mut self, inputs: &[NodeId]) -> Result<NodeId, TensorError> {
        if inputs.is_empty() {
            return Err(TensorError::EmptyInput { op: "concat-cols" });
        }
        let rows = self.values[inputs[0].0].rows();
        let mut cols = 0;
        for &id in inputs {
            let v = &self.values[id.0];
            if v.rows() != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat-cols",
                    lhs: (rows, cols),
                    rhs: v.shape(),
                });
            }
            cols += v.cols();
        }
        let mut value = Tensor::zeros(rows, cols);
        let mut at = 0;
        for &id in inputs {
            let v = &self.values[id.0];
            for r in 0..rows {
                value.row_mut(r)[at..at + v.cols()].copy_from_slice(v.row(r));
            }
            at += v.cols();
        }
        Ok(self.push(Op::ConcatCols(inputs.to_vec()), value))
    }

    /// Elementwise sum over a list of same-shaped tensors. An empty list
    /// yields the zero tensor of the declared shape, so leaf nodes (no
    /// children) degrade to zero vectors.
    pub fn sum_list(
        &mut self,
        inputs: &[NodeId],
        shape: (usize, usize),
    ) -> Result<NodeId, TensorError> {
        let mut value = Tensor::zeros(shape.0, shape.1);
        for &id in inputs {
            let v = &self.values[id.0];
            if v.shape() != shape {
                return Err(TensorError::ShapeMismatch {
                    op: "sum-list",
                    lhs: shape,
                    rhs: v.shape(),
                });
            }
            value.add_scaled(v, 1.0);
        }
        Ok(self.push(Op::SumList(inputs.to_vec()), value))
    }

    /// Per-row maximum over columns: `(r, c) -> (r, 1)`. Ties resolve to the
    /// leftmost column in backward.
    pub fn row_max_pool(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let v = &self.values[x.0];
        if v.cols() == 0 {
            return Err(TensorError::BadShape {
                op: "row-max-pool",
                expected: "at least one column",
                got: v.shape(),
            });
        }
        let mut value = Tensor::zeros(v.rows(), 1);
        for r in 0..v.rows() {
            let row = v.row(r);
            let mut best = row[0];
            for &x in &row[1..] {
                if x > best {
                    best = x;
                }
            }
            value.data_mut()[r] = best;
        }
        Ok(self.push(Op::RowMaxPool(x), value))
    }

    /// `w @ x + b` in one node.
    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let value = self.values[w.0]
            .matmul(&self.values[x.0])?
            .add(&self.values[b.0])?;
        Ok(self.push(Op::Affine { w, x, b }, value))
    }

    /// Row `row` of a matrix as a column vector. Used both for embedding
    /// lookups (row of a table) and for picking one score out of a vector.
    pub fn select_row(&mut self, x: NodeId, row: usize) -> Result<NodeId, TensorError> {
        let v = &self.values[x.0];
        if row >= v.rows() {
            return Err(TensorError::IndexOutOfRange {
                op: "select-row",
                index: row,
                len: v.rows(),
            });
        }
        let value = Tensor::col(v.row(row));
        Ok(self.push(Op::SelectRow(x, row), value))
    }

    // ----- backward --------------------------------------------------------

    /// Accumulate gradients of a scalar loss into every node that feeds it.
    /// Nodes off the loss path are skipped.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), AutodiffError> {
        let shape = self.values[loss.0].shape();
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(shape.0, shape.1));
        }
        let ops = &self.ops;
        let values = &self.values;
        let grads = &mut self.grads;
        for g in grads.iter_mut() {
            *g = None;
        }
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            match &ops[i] {
                Op::Parameter(_) | Op::Constant => {}
                Op::MatMul(a, b) => {
                    add_matmul_a_bt(&g, &values[b.0], slot(grads, values, *a));
                    add_matmul_at_b(&values[a.0], &g, slot(grads, values, *b));
                }
                Op::Add(a, b) => {
                    slot(grads, values, *a).add_scaled(&g, 1.0);
                    slot(grads, values, *b).add_scaled(&g, 1.0);
                }
                Op::Mul(a, b) => {
                    let da = slot(grads, values, *a);
                    for ((d, gv), bv) in da.data_mut().iter_mut().zip(g.data()).zip(values[b.0].data())
                    {
                        *d += gv * bv;
                    }
                    let db = slot(grads, values, *b);
                    for ((d, gv), av) in db.data_mut().iter_mut().zip(g.data()).zip(values[a.0].data())
                    {
                        *d += gv * av;
                    }
                }
                Op::Tanh(x) => {
                    let y = &values[i];
                    let dx = slot(grads, values, *x);
                    for ((d, gy), yv) in dx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *d += gy * (1.0 - yv * yv);
                    }
                }
                Op::Sigmoid(x) => {
                    let y = &values[i];
                    let dx = slot(grads, values, *x);
                    for ((d, gy), yv) in dx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *d += gy * yv * (1.0 - yv);
                    }
                }
                Op::ConcatRows(inputs) => {
                    let mut offset = 0;
                    for id in inputs {
                        let n = values[id.0].len();
                        let dx = slot(grads, values, *id);
                        for (d, gv) in dx.data_mut().iter_mut().zip(&g.data()[offset..offset + n])
                        {
                            *d += gv;
                        }
                        offset += n;
                    }
                }
                Op::ConcatCols(inputs) => {
                    let mut at = 0;
                    for id in inputs {
                        let (rows, cols) = values[id.0].shape();
                        let dx = slot(grads, values, *id);
                        for r in 0..rows {
                            let grow = &g.row(r)[at..at + cols];
                            for (d, gv) in dx.row_mut(r).iter_mut().zip(grow) {
                                *d += gv;
                            }
                        }
                        at += cols;
                    }
                }
                Op::SumList(inputs) => {
                    for id in inputs {
                        slot(grads, values, *id).add_scaled(&g, 1.0);
                    }
                }
                Op::RowMaxPool(x) => {
                    let v = &values[x.0];
                    let dx = slot(grads, values, *x);
                    for r in 0..v.rows() {
                        let row = v.row(r);
                        let mut best = 0;
                        for (c, &xv) in row.iter().enumerate() {
                            if xv > row[best] {
                                best = c;
                            }
                        }
                        dx.row_mut(r)[best] += g.data()[r];
                    }
                }
                Op::Affine { w, x, b } => {
                    add_matmul_a_bt(&g, &values[x.0], slot(grads, values, *w));
                    add_matmul_at_b(&values[w.0], &g, slot(grads, values, *x));
                    slot(grads, values, *b).add_scaled(&g, 1.0);
                }
                Op::SelectRow(x, row) => {
                    let dx = slot(grads, values, *x);
                    for (d, gv) in dx.row_mut(*row).iter_mut().zip(g.data()) {
                        *d += gv;
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(())
    }

    /// `(name, gradient)` for every parameter node touched by the last
    /// backward pass, in tape order.
    pub fn param_grads(&self) -> Vec<(&str, &Tensor)> {
        self.ops
            .iter()
            .enumerate()
            .filter_map(|(i, op)| match op {
                Op::Parameter(name) => self.grads[i].as_ref().map(|g| (name.as_str(), g)),
                _ => None,
            })
            .collect()
    }

    pub fn has_params(&self) -> bool {
        !self.param_ids.is_empty()
    }
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], values: &[Tensor], id: NodeId) -> &'a mut Tensor {
    let (rows, cols) = values[id.0].shape();
    grads[id.0].get_or_insert_with(|| Tensor::zeros(rows, cols))
}

/// Compare analytic gradients against central finite differences.
///
/// `build` must deterministically reconstruct the same scalar loss from the
/// store; it is re-run with each parameter entry nudged by `±epsilon`.
/// Returns the max over all parameter entries of
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn gradient_check<F>(
    mut build: F,
    store: &mut ParameterStore,
    epsilon: f64,
) -> Result<f64, AutodiffError>
where
    F: FnMut(&mut Tape, &ParameterStore) -> Result<NodeId, AutodiffError>,
{
    let eval = |build: &mut F, store: &ParameterStore| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let loss = build(&mut tape, store)?;
        let shape = tape.value(loss).shape();
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(shape.0, shape.1));
        }
        Ok(tape.value(loss).item())
    };

    let l0 = eval(&mut build, store)?;
    let l1 = eval(&mut build, store)?;
    if l0.to_bits() != l1.to_bits() {
        return Err(AutodiffError::NonDeterministicBuilder(l0, l1));
    }

    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    tape.backward(loss)?;
    if !tape.has_params() {
        return Err(AutodiffError::NoParameters);
    }
    let analytic: Vec<(String, Tensor)> = tape
        .param_grads()
        .into_iter()
        .map(|(n, g)| (n.to_string(), g.clone()))
        .collect();
    if analytic.is_empty() {
        return Err(AutodiffError::NoParameters);
    }

    let mut max_rel = 0.0f64;
    for (name, grad) in &analytic {
        for idx in 0..grad.len() {
            let orig = store.get(name).unwrap().data()[idx];
            store.get_mut(name).unwrap().data_mut()[idx] = orig + epsilon;
            let lp = eval(&mut build, store)?;
            store.get_mut(name).unwrap().data_mut()[idx] = orig - epsilon;
            let lm = eval(&mut build, store)?;
            store.get_mut(name).unwrap().data_mut()[idx] = orig;

            let numeric = (lp - lm) / (2.0 * epsilon);
            let a = grad.data()[idx];
            let rel = (a - numeric).abs() / (1e-8f64).max(a.abs() + numeric.abs());
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(entries: &[(&str, Tensor)]) -> ParameterStore {
        let mut s = ParameterStore::new();
        for (n, t) in entries {
            s.insert(n, t.clone()).unwrap();
        }
        s
    }

    #[test]
    fn tanh_of_zero_vector_is_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::col(&[0.0, 0.0]));
        let y = tape.tanh(x);
        assert_eq!(tape.forward(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn empty_sum_list_is_zero_vector() {
        let mut tape = Tape::new();
        let y = tape.sum_list(&[], (3, 1)).unwrap();
        assert_eq!(tape.forward(y).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_identity_passes_through() {
        let mut tape = Tape::new();
        let id = tape.constant(Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let v = tape.constant(Tensor::col(&[3.0, 5.0]));
        let y = tape.matmul(id, v).unwrap();
        assert_eq!(tape.forward(y).data(), &[3.0, 5.0]);
    }

    #[test]
    fn square_gradient() {
        // loss = p^2 with p = 3 -> dp = 6
        let mut store = store_with(&[("p", Tensor::scalar(3.0))]);
        let mut tape = Tape::new();
        let p = tape.param(&store, "p").unwrap();
        let loss = tape.mul(p, p).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(p).unwrap().item(), 6.0);
        drop(tape);
        let _ = &mut store;
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let store = store_with(&[("p", Tensor::scalar(0.0))]);
        let mut tape = Tape::new();
        let p = tape.param(&store, "p").unwrap();
        let loss = tape.sigmoid(p);
        tape.backward(loss).unwrap();
        assert!((tape.grad(p).unwrap().item() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::col(&[1.0, 2.0]));
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, AutodiffError::NonScalarLoss(2, 1)));
    }

    #[test]
    fn shared_subgraph_gradients_accumulate() {
        // loss = p*p + p  => dp = 2p + 1 = 7 at p=3
        let store = store_with(&[("p", Tensor::scalar(3.0))]);
        let mut tape = Tape::new();
        let p = tape.param(&store, "p").unwrap();
        let sq = tape.mul(p, p).unwrap();
        let loss = tape.add(sq, p).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(p).unwrap().item(), 7.0);
    }

    #[test]
    fn row_max_pool_routes_gradient_to_argmax() {
        let store = store_with(&[(
            "m",
            Tensor::from_vec(2, 3, vec![1.0, 5.0, 2.0, 7.0, 0.0, 7.0]).unwrap(),
        )]);
        let mut tape = Tape::new();
        let m = tape.param(&store, "m").unwrap();
        let pooled = tape.row_max_pool(m).unwrap();
        assert_eq!(tape.value(pooled).data(), &[5.0, 7.0]);
        let ones = tape.constant(Tensor::col(&[1.0, 1.0]));
        let s = tape.mul(pooled, ones).unwrap();
        let total = tape.concat_cols(&[s]).unwrap();
        // reduce to scalar via select of each row then sum
        let a = tape.select_row(total, 0).unwrap();
        let b = tape.select_row(total, 1).unwrap();
        let loss = tape.add(a, b).unwrap();
        tape.backward(loss).unwrap();
        // tie in row 1 resolves to the leftmost column
        assert_eq!(
            tape.grad(m).unwrap().data(),
            &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn gradient_check_affine_tanh() {
        let mut store = store_with(&[
            ("w", Tensor::from_vec(2, 3, vec![0.1, -0.2, 0.3, 0.5, 0.05, -0.4]).unwrap()),
            ("b", Tensor::col(&[0.01, -0.02])),
        ]);
        let max_rel = gradient_check(
            |tape, store| {
                let w = tape.param(store, "w")?;
                let b = tape.param(store, "b")?;
                let x = tape.constant(Tensor::col(&[0.3, -0.7, 1.1]));
                let h = tape.affine(w, x, b)?;
                let y = tape.tanh(h);
                // scalar loss: sum of entries via select+add
                let a = tape.select_row(y, 0)?;
                let c = tape.select_row(y, 1)?;
                Ok(tape.add(a, c)?)
            },
            &mut store,
            1e-5,
        )
        .unwrap();
        assert!(max_rel < 1e-6, "max relative error {max_rel}");
    }

    #[test]
    fn gradient_check_rejects_zero_parameter_graph() {
        let mut store = ParameterStore::new();
        let err = gradient_check(
            |tape, _| {
                let x = tape.constant(Tensor::scalar(2.0));
                Ok(tape.mul(x, x)?)
            },
            &mut store,
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, AutodiffError::NoParameters));
    }

    #[test]
    fn forward_is_pure() {
        let store = store_with(&[("p", Tensor::col(&[0.4, -0.9]))]);
        let run = || {
            let mut tape = Tape::new();
            let p = tape.param(&store, "p").unwrap();
            let t = tape.tanh(p);
            let s = tape.sigmoid(t);
            let a = tape.select_row(s, 0).unwrap();
            let b = tape.select_row(s, 1).unwrap();
            let loss = tape.mul(a, b).unwrap();
            tape.value(loss).item().to_bits()
        };
        assert_eq!(run(), run());
    }
}
