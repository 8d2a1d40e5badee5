//! Subtree representations: the feature gate between tree depths, the
//! child-sum tree-LSTM composer, and the simplified recursive-convolutional
//! alternative with a single global composition matrix.
//!
//! Children are always composed in canonical order (ascending original token
//! index), so permuting the caller's child list cannot change a single bit
//! of the result, and an incremental recomputation matches a from-scratch
//! recursive one exactly.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bilstm::xavier;
use crate::embed::{EmbedError, Embeddings};
use crate::params::{ParamError, ParameterStore};
use crate::tape::{AutodiffError, NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum SubtreeError {
    #[error("child vector has dim {got}, expected {expected}")]
    ChildDim { got: usize, expected: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Which composer maintains subtree representations. `None` is the plain
/// sequence-encoder baseline: representations stay the contextual vectors
/// and attachments never update them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    TreeLstm,
    Rcnn,
    None,
}

/// A finished composition: the exposed representation and the memory cell.
/// For the tree-LSTM `tau` is the hidden state; the RCNN has no cell and
/// carries a zero vector so the parser stays encoder-agnostic.
#[derive(Debug, Clone, Copy)]
pub struct Composed {
    pub tau: NodeId,
    pub cell: NodeId,
}

/// A child that has already passed the feature gate.
#[derive(Debug, Clone, Copy)]
pub struct GatedChild {
    /// Original sentence position; the canonical composition sort key.
    pub token_index: usize,
    pub gated: NodeId,
    pub cell: NodeId,
}

/// An attached child as the parser sees it, before gating.
#[derive(Debug, Clone, Copy)]
pub struct ChildRef {
    pub token_index: usize,
    pub rel_id: usize,
    pub tau: NodeId,
    pub cell: NodeId,
}

/// `g = tanh(W (h ⊕ v_dist ⊕ v_rel) + b)`, inserted between tree depths.
#[derive(Debug, Clone)]
pub struct FeatureGateParams {
    prefix: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl FeatureGateParams {
    pub fn register(
        store: &mut ParameterStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, ParamError> {
        store.insert_uniform(
            &format!("{prefix}.w"),
            out_dim,
            in_dim,
            xavier(out_dim, in_dim),
            rng,
        )?;
        store.insert(&format!("{prefix}.b"), Tensor::zeros(out_dim, 1))?;
        Ok(FeatureGateParams {
            prefix: prefix.to_string(),
            in_dim,
            out_dim,
        })
    }

    pub fn attached(prefix: &str, in_dim: usize, out_dim: usize) -> Self {
        FeatureGateParams {
            prefix: prefix.to_string(),
            in_dim,
            out_dim,
        }
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        child_tau: NodeId,
        v_dist: NodeId,
        v_rel: NodeId,
    ) -> Result<NodeId, SubtreeError> {
        let feat = tape.concat_rows(&[child_tau, v_dist, v_rel])?;
        if tape.value(feat).rows() != self.in_dim {
            return Err(SubtreeError::ChildDim {
                got: tape.value(feat).rows(),
                expected: self.in_dim,
            });
        }
        let w = tape.param(store, &format!("{}.w", self.prefix))?;
        let b = tape.param(store, &format!("{}.b", self.prefix))?;
        let pre = tape.affine(w, feat, b)?;
        Ok(tape.tanh(pre))
    }
}

/// Gate matrices for the child-sum cell: `W` acts on the head input, `U`
/// acts on gated child vectors.
#[derive(Debug, Clone)]
pub struct TreeLstmParams {
    prefix: String,
    pub x_dim: usize,
    pub tree_dim: usize,
}

impl TreeLstmParams {
    pub fn register(
        store: &mut ParameterStore,
        prefix: &str,
        x_dim: usize,
        tree_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, ParamError> {
        for gate in ["i", "f", "o", "u"] {
            store.insert_uniform(
                &format!("{prefix}.w_{gate}"),
                tree_dim,
                x_dim,
                xavier(tree_dim, x_dim),
                rng,
            )?;
            store.insert_uniform(
                &format!("{prefix}.u_{gate}"),
                tree_dim,
                tree_dim,
                xavier(tree_dim, tree_dim),
                rng,
            )?;
            let bias = if gate == "f" { 1.0 } else { 0.0 };
            store.insert(
                &format!("{prefix}.b_{gate}"),
                Tensor::from_vec(tree_dim, 1, vec![bias; tree_dim]).expect("sized"),
            )?;
        }
        Ok(TreeLstmParams {
            prefix: prefix.to_string(),
            x_dim,
            tree_dim,
        })
    }

    pub fn attached(prefix: &str, x_dim: usize, tree_dim: usize) -> Self {
        TreeLstmParams {
            prefix: prefix.to_string(),
            x_dim,
            tree_dim,
        }
    }

    fn wxb(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        gate: &str,
        x: NodeId,
    ) -> Result<NodeId, SubtreeError> {
        let w = tape.param(store, &format!("{}.w_{gate}", self.prefix))?;
        let b = tape.param(store, &format!("{}.b_{gate}", self.prefix))?;
        Ok(tape.affine(w, x, b)?)
    }

    fn u(&self, tape: &mut Tape, store: &ParameterStore, gate: &str) -> Result<NodeId, AutodiffError> {
        tape.param(store, &format!("{}.u_{gate}", self.prefix))
    }
}

/// Child-sum composition. One forget gate is computed per child; an empty
/// child list realizes the leaf initialization (zero hidden state and cell).
pub fn compose_tree_lstm(
    tape: &mut Tape,
    store: &ParameterStore,
    params: &TreeLstmParams,
    children: &[GatedChild],
    x: NodeId,
) -> Result<Composed, SubtreeError> {
    let dim = params.tree_dim;
    for child in children {
        let got = tape.value(child.gated).rows();
        if got != dim {
            return Err(SubtreeError::ChildDim { got, expected: dim });
        }
    }
    let mut ordered: Vec<GatedChild> = children.to_vec();
    ordered.sort_by_key(|c| c.token_index);

    let gates: Vec<NodeId> = ordered.iter().map(|c| c.gated).collect();
    let h_tilde = tape.sum_list(&gates, (dim, 1))?;

    let gated_pre = |tape: &mut Tape, name: &str| -> Result<NodeId, SubtreeError> {
        let wxb = params.wxb(tape, store, name, x)?;
        let u = params.u(tape, store, name)?;
        let uh = tape.matmul(u, h_tilde)?;
        Ok(tape.add(wxb, uh)?)
    };

    let i_pre = gated_pre(tape, "i")?;
    let o_pre = gated_pre(tape, "o")?;
    let u_pre = gated_pre(tape, "u")?;
    let i = tape.sigmoid(i_pre);
    let o = tape.sigmoid(o_pre);
    let u = tape.tanh(u_pre);

    // one forget gate per child, sharing the W x + b term
    let f_base = params.wxb(tape, store, "f", x)?;
    let u_f = params.u(tape, store, "f")?;
    let mut forget_terms = Vec::with_capacity(ordered.len());
    for child in &ordered {
        let ug = tape.matmul(u_f, child.gated)?;
        let pre = tape.add(f_base, ug)?;
        let f = tape.sigmoid(pre);
        forget_terms.push(tape.mul(f, child.cell)?);
    }

    let iu = tape.mul(i, u)?;
    let carried = tape.sum_list(&forget_terms, (dim, 1))?;
    let cell = tape.add(iu, carried)?;
    let tc = tape.tanh(cell);
    let hidden = tape.mul(o, tc)?;
    Ok(Composed {
        tau: hidden,
        cell,
    })
}

/// The single global composition matrix of the simplified RCNN.
#[derive(Debug, Clone)]
pub struct RcnnParams {
    name: String,
    pub x_dim: usize,
    pub gate_dim: usize,
    pub out_dim: usize,
}

impl RcnnParams {
    pub fn register(
        store: &mut ParameterStore,
        name: &str,
        x_dim: usize,
        gate_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, ParamError> {
        let in_dim = x_dim + gate_dim;
        store.insert_uniform(name, out_dim, in_dim, xavier(out_dim, in_dim), rng)?;
        Ok(RcnnParams {
            name: name.to_string(),
            x_dim,
            gate_dim,
            out_dim,
        })
    }

    pub fn attached(name: &str, x_dim: usize, gate_dim: usize, out_dim: usize) -> Self {
        RcnnParams {
            name: name.to_string(),
            x_dim,
            gate_dim,
            out_dim,
        }
    }
}

/// Convolution-and-pool composition: one column `z_k = tanh(W (x ⊕ g_k))`
/// per child, max-pooled across columns per row. A node without children
/// pools over the single column built from `x ⊕ 0`.
pub fn compose_rcnn(
    tape: &mut Tape,
    store: &ParameterStore,
    params: &RcnnParams,
    children: &[GatedChild],
    x: NodeId,
) -> Result<Composed, SubtreeError> {
    let mut ordered: Vec<GatedChild> = children.to_vec();
    ordered.sort_by_key(|c| c.token_index);

    let w = tape.param(store, &params.name)?;
    let mut columns = Vec::with_capacity(ordered.len().max(1));
    if ordered.is_empty() {
        let zero_gate = tape.constant(Tensor::zeros(params.gate_dim, 1));
        let p = tape.concat_rows(&[x, zero_gate])?;
        let z = tape.matmul(w, p)?;
        columns.push(tape.tanh(z));
    } else {
        for child in &ordered {
            let got = tape.value(child.gated).rows();
            if got != params.gate_dim {
                return Err(SubtreeError::ChildDim {
                    got,
                    expected: params.gate_dim,
                });
            }
            let p = tape.concat_rows(&[x, child.gated])?;
            let z = tape.matmul(w, p)?;
            columns.push(tape.tanh(z));
        }
    }
    let stacked = tape.concat_cols(&columns)?;
    let tau = tape.row_max_pool(stacked)?;
    let cell = tape.constant(Tensor::zeros(params.out_dim, 1));
    Ok(Composed { tau, cell })
}

/// The configured subtree encoder: gate parameters plus one composer.
#[derive(Debug, Clone)]
pub struct SubtreeEncoder {
    pub kind: EncoderKind,
    pub tau_dim: usize,
    pub gate: Option<FeatureGateParams>,
    pub tree: Option<TreeLstmParams>,
    pub rcnn: Option<RcnnParams>,
}

impl SubtreeEncoder {
    pub fn register(
        store: &mut ParameterStore,
        kind: EncoderKind,
        x_dim: usize,
        tree_dim: usize,
        dist_dim: usize,
        rel_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, ParamError> {
        match kind {
            EncoderKind::None => Ok(SubtreeEncoder {
                kind,
                tau_dim: x_dim,
                gate: None,
                tree: None,
                rcnn: None,
            }),
            EncoderKind::TreeLstm => Ok(SubtreeEncoder {
                kind,
                tau_dim: tree_dim,
                gate: Some(FeatureGateParams::register(
                    store,
                    "gate",
                    tree_dim + dist_dim + rel_dim,
                    tree_dim,
                    rng,
                )?),
                tree: Some(TreeLstmParams::register(store, "tree", x_dim, tree_dim, rng)?),
                rcnn: None,
            }),
            EncoderKind::Rcnn => Ok(SubtreeEncoder {
                kind,
                tau_dim: tree_dim,
                gate: Some(FeatureGateParams::register(
                    store,
                    "gate",
                    tree_dim + dist_dim + rel_dim,
                    tree_dim,
                    rng,
                )?),
                tree: None,
                rcnn: Some(RcnnParams::register(
                    store, "rcnn.w", x_dim, tree_dim, tree_dim, rng,
                )?),
            }),
        }
    }

    pub fn attached(
        kind: EncoderKind,
        x_dim: usize,
        tree_dim: usize,
        dist_dim: usize,
        rel_dim: usize,
    ) -> Self {
        match kind {
            EncoderKind::None => SubtreeEncoder {
                kind,
                tau_dim: x_dim,
                gate: None,
                tree: None,
                rcnn: None,
            },
            EncoderKind::TreeLstm => SubtreeEncoder {
                kind,
                tau_dim: tree_dim,
                gate: Some(FeatureGateParams::attached(
                    "gate",
                    tree_dim + dist_dim + rel_dim,
                    tree_dim,
                )),
                tree: Some(TreeLstmParams::attached("tree", x_dim, tree_dim)),
                rcnn: None,
            },
            EncoderKind::Rcnn => SubtreeEncoder {
                kind,
                tau_dim: tree_dim,
                gate: Some(FeatureGateParams::attached(
                    "gate",
                    tree_dim + dist_dim + rel_dim,
                    tree_dim,
                )),
                tree: None,
                rcnn: Some(RcnnParams::attached("rcnn.w", x_dim, tree_dim, tree_dim)),
            },
        }
    }

    /// Representation of a node with no children yet.
    pub fn leaf(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        x: NodeId,
    ) -> Result<Composed, SubtreeError> {
        match self.kind {
            EncoderKind::None => {
                let cell = tape.constant(Tensor::zeros(self.tau_dim, 1));
                Ok(Composed { tau: x, cell })
            }
            EncoderKind::TreeLstm => {
                compose_tree_lstm(tape, store, self.tree.as_ref().unwrap(), &[], x)
            }
            EncoderKind::Rcnn => compose_rcnn(tape, store, self.rcnn.as_ref().unwrap(), &[], x),
        }
    }

    /// Recompute a head's representation over its attached children. The
    /// children enter through the feature gate with the head-relative
    /// distance and the arc relation; composition order is canonical.
    pub fn compose(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        embeds: &Embeddings,
        head_token_index: usize,
        children: &[ChildRef],
        x: NodeId,
    ) -> Result<Composed, SubtreeError> {
        if matches!(self.kind, EncoderKind::None) {
            // baseline: attachments never update the representation
            let cell = tape.constant(Tensor::zeros(self.tau_dim, 1));
            return Ok(Composed { tau: x, cell });
        }
        let gate = self.gate.as_ref().expect("gate registered");
        let mut gated = Vec::with_capacity(children.len());
        for child in children {
            let v_d = embeds.embed_distance(tape, store, head_token_index, child.token_index)?;
            let v_r = embeds.embed_relation(tape, store, child.rel_id)?;
            let g = gate.apply(tape, store, child.tau, v_d, v_r)?;
            gated.push(GatedChild {
                token_index: child.token_index,
                gated: g,
                cell: child.cell,
            });
        }
        match self.kind {
            EncoderKind::TreeLstm => {
                compose_tree_lstm(tape, store, self.tree.as_ref().unwrap(), &gated, x)
            }
            EncoderKind::Rcnn => compose_rcnn(tape, store, self.rcnn.as_ref().unwrap(), &gated, x),
            EncoderKind::None => unreachable!(),
        }
    }
}
