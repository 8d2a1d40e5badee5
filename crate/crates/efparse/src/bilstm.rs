//! Bidirectional LSTM over token embeddings.
//!
//! Produces one contextual vector per position (root token prepended), each
//! the concatenation of the forward and backward hidden states, so the
//! output width is `2 * hidden_dim` regardless of sentence length.

use rand::Rng;

use crate::params::{ParamError, ParameterStore};
use crate::tape::{AutodiffError, NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum EncodeError {
    #[error("cannot encode an empty sentence")]
    EmptySentence,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

/// Parameter names for one LSTM direction: four gates, each with an
/// input-to-hidden matrix, a hidden-to-hidden matrix, and a bias.
#[derive(Debug, Clone)]
pub struct LstmCellParams {
    prefix: String,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

const GATES: [&str; 4] = ["i", "f", "o", "u"];

impl LstmCellParams {
    /// Register gate parameters under `prefix`. The forget-gate bias starts
    /// at 1.0; everything else is Xavier-uniform.
    pub fn register(
        store: &mut ParameterStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, ParamError> {
        for gate in GATES {
            let w_scale = xavier(hidden_dim, input_dim);
            let u_scale = xavier(hidden_dim, hidden_dim);
            store.insert_uniform(&format!("{prefix}.w_{gate}"), hidden_dim, input_dim, w_scale, rng)?;
            store.insert_uniform(&format!("{prefix}.u_{gate}"), hidden_dim, hidden_dim, u_scale, rng)?;
            let bias = if gate == "f" { 1.0 } else { 0.0 };
            store.insert(
                &format!("{prefix}.b_{gate}"),
                Tensor::from_vec(hidden_dim, 1, vec![bias; hidden_dim]).expect("sized"),
            )?;
        }
        Ok(LstmCellParams {
            prefix: prefix.to_string(),
            input_dim,
            hidden_dim,
        })
    }

    pub fn attached(prefix: &str, input_dim: usize, hidden_dim: usize) -> Self {
        LstmCellParams {
            prefix: prefix.to_string(),
            input_dim,
            hidden_dim,
        }
    }

    fn gate(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        gate: &str,
        x: NodeId,
        h: NodeId,
    ) -> Result<NodeId, EncodeError> {
        let w = tape.param(store, &format!("{}.w_{gate}", self.prefix))?;
        let u = tape.param(store, &format!("{}.u_{gate}", self.prefix))?;
        let b = tape.param(store, &format!("{}.b_{gate}", self.prefix))?;
        let wx = tape.affine(w, x, b)?;
        let uh = tape.matmul(u, h)?;
        Ok(tape.add(wx, uh)?)
    }

    /// One LSTM step; returns the next `(hidden, cell)`.
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        x: NodeId,
        h: NodeId,
        c: NodeId,
    ) -> Result<(NodeId, NodeId), EncodeError> {
        let i_pre = self.gate(tape, store, "i", x, h)?;
        let f_pre = self.gate(tape, store, "f", x, h)?;
        let o_pre = self.gate(tape, store, "o", x, h)?;
        let u_pre = self.gate(tape, store, "u", x, h)?;
        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let o = tape.sigmoid(o_pre);
        let u = tape.tanh(u_pre);
        let fc = tape.mul(f, c)?;
        let iu = tape.mul(i, u)?;
        let c_next = tape.add(fc, iu)?;
        let tc = tape.tanh(c_next);
        let h_next = tape.mul(o, tc)?;
        Ok((h_next, c_next))
    }
}

/// Contextual vectors, one per input node, each `2 * hidden_dim` wide.
#[derive(Debug)]
pub struct ContextualSentence {
    pub x: Vec<NodeId>,
    pub width: usize,
}

/// Both directions of the sentence encoder.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub fwd: LstmCellParams,
    pub bwd: LstmCellParams,
}

impl BiLstm {
    pub fn register(
        store: &mut ParameterStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, ParamError> {
        Ok(BiLstm {
            fwd: LstmCellParams::register(store, &format!("{prefix}.fwd"), input_dim, hidden_dim, rng)?,
            bwd: LstmCellParams::register(store, &format!("{prefix}.bwd"), input_dim, hidden_dim, rng)?,
        })
    }

    pub fn attached(prefix: &str, input_dim: usize, hidden_dim: usize) -> Self {
        BiLstm {
            fwd: LstmCellParams::attached(&format!("{prefix}.fwd"), input_dim, hidden_dim),
            bwd: LstmCellParams::attached(&format!("{prefix}.bwd"), input_dim, hidden_dim),
        }
    }

    /// Encode a sequence of embedded positions (root embedding first). The
    /// forward and backward hidden states are concatenated per position.
    pub fn encode_sentence(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        inputs: &[NodeId],
    ) -> Result<ContextualSentence, EncodeError> {
        if inputs.is_empty() {
            return Err(EncodeError::EmptySentence);
        }
        let h_dim = self.fwd.hidden_dim;
        let zero = tape.constant(Tensor::zeros(h_dim, 1));

        let mut forward = Vec::with_capacity(inputs.len());
        let (mut h, mut c) = (zero, zero);
        for &x in inputs {
            let (h2, c2) = self.fwd.step(tape, store, x, h, c)?;
            forward.push(h2);
            h = h2;
            c = c2;
        }

        let mut backward = vec![zero; inputs.len()];
        let (mut h, mut c) = (zero, zero);
        for (pos, &x) in inputs.iter().enumerate().rev() {
            let (h2, c2) = self.bwd.step(tape, store, x, h, c)?;
            backward[pos] = h2;
            h = h2;
            c = c2;
        }

        let mut x_out = Vec::with_capacity(inputs.len());
        for (f, b) in forward.into_iter().zip(backward) {
            x_out.push(tape.concat_rows(&[f, b])?);
        }
        Ok(ContextualSentence {
            x: x_out,
            width: 2 * h_dim,
        })
    }
}

pub(crate) fn xavier(fan_out: usize, fan_in: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
