//! The easy-first state machine: pending list, attachment actions, the MLP
//! action scorer, greedy decoding, the validity oracle, and the margin
//! trainer.
//!
//! A sentence is parsed on one tape. Leaf representations and the sequence
//! encoder live at the front; every attachment appends the head's fresh
//! composition, referencing the child representations already on the tape.
//! A decision loss therefore backpropagates through the entire
//! within-sentence composition history into the gate, the composers, the
//! distance/relation embeddings, and the sequence encoder; the tape is
//! dropped after the sentence, so graphs stay sentence-sized.

use rand::Rng;
use thiserror::Error;

use crate::conll::{PredictedTree, SentenceRecord};
use crate::model::Model;
use crate::params::{ParamError, ParameterStore, Sgd};
use crate::subtree::{ChildRef, EncoderKind};
use crate::tape::{AutodiffError, NodeId, Tape};
use crate::tensor::Tensor;
use crate::vocab::{ROOT_ID, UNK_ID};

#[derive(Debug, Error)]
pub enum ParserError {
    #[error("cannot parse an empty sentence")]
    EmptySentence,
    #[error("illegal action {kind:?} at position {position} with {pending} pending entries")]
    IllegalAction {
        kind: ActionKind,
        position: usize,
        pending: usize,
    },
    #[error("state is terminal; no actions apply")]
    Terminal,
    #[error("oracle deadlock: no valid action in a reachable state (sentence `{0}`)")]
    OracleDeadlock(String),
    #[error("gold tree is not projective")]
    NonProjectiveGold,
    #[error(transparent)]
    Encode(#[from] crate::bilstm::EncodeError),
    #[error(transparent)]
    Subtree(#[from] crate::subtree::SubtreeError),
    #[error(transparent)]
    Embed(#[from] crate::embed::EmbedError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// The two attachment kinds over an adjacent pending pair `(p_i, p_{i+1})`:
/// `AttachLeft` heads the pair under `p_i` (removing `p_{i+1}`),
/// `AttachRight` under `p_{i+1}` (removing `p_i`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ActionKind {
    AttachLeft,
    AttachRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Action {
    pub kind: ActionKind,
    /// 0-based index of the left member of the pending pair.
    pub position: usize,
    /// Relation id assigned to the new arc.
    pub rel: usize,
}

/// An arc already committed to the parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArcRecord {
    pub head: usize,
    pub modifier: usize,
    pub rel: usize,
    pub side: ActionKind,
}

/// A collected child of a pending entry, with the child's final
/// representation nodes captured at attachment time.
#[derive(Debug, Clone, Copy)]
pub struct ChildArcRecord {
    pub token_index: usize,
    pub rel: usize,
    pub side: ActionKind,
    pub tau: NodeId,
    pub cell: NodeId,
}

#[derive(Debug, Clone)]
pub struct PendingEntry {
    /// Original position: 0 for the root token, 1..=N for words.
    pub token_index: usize,
    pub is_root: bool,
    pub tau: NodeId,
    pub cell: NodeId,
    /// Children in attachment order; composition re-sorts canonically.
    pub children: Vec<ChildArcRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct ParserState {
    pub pending: Vec<PendingEntry>,
    pub arcs: Vec<ArcRecord>,
    pub steps: usize,
}

impl ParserState {
    pub fn is_terminal(&self) -> bool {
        self.pending.len() == 1
    }
}

/// Structural actions legal in a state: every adjacent pair both ways,
/// minus anything that would give the root token a head. The root only
/// ever acquires children.
pub fn legal_actions(state: &ParserState) -> Vec<(ActionKind, usize)> {
    let p = state.pending.len();
    let mut out = Vec::new();
    if p < 2 {
        return out;
    }
    for i in 0..p - 1 {
        if !state.pending[i + 1].is_root {
            out.push((ActionKind::AttachLeft, i));
        }
        if !state.pending[i].is_root {
            out.push((ActionKind::AttachRight, i));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Scorer
// ---------------------------------------------------------------------------

/// Two-layer MLP over a window of pending representations around the
/// candidate pair, with one output per action kind and relation slot.
/// Boundary positions read learned pad vectors.
#[derive(Debug, Clone)]
pub struct Scorer {
    pub tau_dim: usize,
    pub hidden_dim: usize,
    pub window: usize,
    pub rel_slots: usize,
}

impl Scorer {
    pub fn register(
        store: &mut ParameterStore,
        tau_dim: usize,
        hidden_dim: usize,
        window: usize,
        rel_slots: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, ParamError> {
        let scorer = Scorer {
            tau_dim,
            hidden_dim,
            window,
            rel_slots,
        };
        let input = scorer.input_dim();
        let out = scorer.out_dim();
        store.insert_uniform(
            "scorer.w1",
            hidden_dim,
            input,
            crate::bilstm::xavier(hidden_dim, input),
            rng,
        )?;
        store.insert("scorer.b1", Tensor::zeros(hidden_dim, 1))?;
        store.insert_uniform(
            "scorer.w2",
            out,
            hidden_dim,
            crate::bilstm::xavier(out, hidden_dim),
            rng,
        )?;
        store.insert("scorer.b2", Tensor::zeros(out, 1))?;
        store.insert_uniform("scorer.pad_left", tau_dim, 1, 0.01, rng)?;
        store.insert_uniform("scorer.pad_right", tau_dim, 1, 0.01, rng)?;
        Ok(scorer)
    }

    pub fn attached(tau_dim: usize, hidden_dim: usize, window: usize, rel_slots: usize) -> Self {
        Scorer {
            tau_dim,
            hidden_dim,
            window,
            rel_slots,
        }
    }

    /// `window` entries each side of the pair, plus the pair itself.
    pub fn slots(&self) -> usize {
        2 * self.window + 2
    }

    pub fn input_dim(&self) -> usize {
        self.slots() * self.tau_dim
    }

    pub fn out_dim(&self) -> usize {
        2 * self.rel_slots
    }

    pub fn row(&self, kind: ActionKind, rel_slot: usize) -> usize {
        let k = match kind {
            ActionKind::AttachLeft => 0,
            ActionKind::AttachRight => 1,
        };
        k * self.rel_slots + rel_slot
    }

    /// All scores for one pair position, given the window of representation
    /// values. Mirrors the tape path bit for bit.
    pub fn score_window_values(&self, store: &ParameterStore, window: &[&Tensor]) -> Tensor {
        debug_assert_eq!(window.len(), self.slots());
        let mut feat = Vec::with_capacity(self.input_dim());
        for t in window {
            feat.extend_from_slice(t.data());
        }
        let feat = Tensor::from_vec(self.input_dim(), 1, feat).expect("window sized");
        let w1 = store.get("scorer.w1").expect("registered");
        let b1 = store.get("scorer.b1").expect("registered");
        let w2 = store.get("scorer.w2").expect("registered");
        let b2 = store.get("scorer.b2").expect("registered");
        let hidden = w1.matmul(&feat).expect("shapes").add(b1).expect("shapes");
        let hidden = hidden.map(f64::tanh);
        w2.matmul(&hidden).expect("shapes").add(b2).expect("shapes")
    }

    /// One action score as a tape node, for the training loss.
    pub fn score_on_tape(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        window: &[NodeId],
        kind: ActionKind,
        rel_slot: usize,
    ) -> Result<NodeId, ParserError> {
        debug_assert_eq!(window.len(), self.slots());
        let feat = tape.concat_rows(window)?;
        let w1 = tape.param(store, "scorer.w1")?;
        let b1 = tape.param(store, "scorer.b1")?;
        let pre = tape.affine(w1, feat, b1)?;
        let hidden = tape.tanh(pre);
        let w2 = tape.param(store, "scorer.w2")?;
        let b2 = tape.param(store, "scorer.b2")?;
        let out = tape.affine(w2, hidden, b2)?;
        Ok(tape.select_row(out, self.row(kind, rel_slot))?)
    }
}

// ---------------------------------------------------------------------------
// Parse session
// ---------------------------------------------------------------------------

/// One sentence being parsed: the tape, the contextual vectors, and the
/// евolving state.
pub struct ParseSession<'m> {
    pub model: &'m Model,
    pub tape: Tape,
    /// Contextual vector per position, root first.
    pub x: Vec<NodeId>,
    pub state: ParserState,
}

impl<'m> ParseSession<'m> {
    /// Build the per-sentence graph: embeddings, sequence encoder, and one
    /// leaf representation per position (root included).
    pub fn start(
        model: &'m Model,
        word_ids: &[usize],
        pos_ids: &[usize],
        external: Option<&[Vec<f64>]>,
    ) -> Result<Self, ParserError> {
        if word_ids.is_empty() {
            return Err(ParserError::EmptySentence);
        }
        debug_assert_eq!(word_ids.len(), pos_ids.len());
        let mut tape = Tape::new();
        let store = &model.store;
        let ext_dim = model.hyper.external_dim;

        let mut embedded = Vec::with_capacity(word_ids.len() + 1);
        for pos in 0..=word_ids.len() {
            let (w, p) = if pos == 0 {
                (ROOT_ID, ROOT_ID)
            } else {
                (word_ids[pos - 1], pos_ids[pos - 1])
            };
            let mut e = model.embeds.embed_token(&mut tape, store, w, p)?;
            if ext_dim > 0 {
                let ctx = if pos == 0 {
                    Tensor::zeros(ext_dim, 1)
                } else {
                    let v = external
                        .and_then(|s| s.get(pos - 1))
                        .cloned()
                        .unwrap_or_else(|| vec![0.0; ext_dim]);
                    Tensor::col(&v)
                };
                let c = tape.constant(ctx);
                e = tape.concat_rows(&[e, c])?;
            }
            embedded.push(e);
        }

        let ctx = model.bilstm.encode_sentence(&mut tape, store, &embedded)?;
        let mut pending = Vec::with_capacity(ctx.x.len());
        for (pos, &x) in ctx.x.iter().enumerate() {
            let leaf = model.encoder.leaf(&mut tape, store, x)?;
            pending.push(PendingEntry {
                token_index: pos,
                is_root: pos == 0,
                tau: leaf.tau,
                cell: leaf.cell,
                children: Vec::new(),
            });
        }
        Ok(ParseSession {
            model,
            tape,
            x: ctx.x,
            state: ParserState {
                pending,
                arcs: Vec::new(),
                steps: 0,
            },
        })
    }

    /// Window of representation node ids around pair position `pos`.
    pub fn window_nodes(&mut self, pos: usize) -> Result<Vec<NodeId>, ParserError> {
        let scorer = &self.model.scorer;
        let w = scorer.window as i64;
        let p = self.state.pending.len() as i64;
        let mut out = Vec::with_capacity(scorer.slots());
        for offset in -w..w + 2 {
            let idx = pos as i64 + offset;
            if idx < 0 {
                out.push(self.tape.param(&self.model.store, "scorer.pad_left")?);
            } else if idx >= p {
                out.push(self.tape.param(&self.model.store, "scorer.pad_right")?);
            } else {
                out.push(self.state.pending[idx as usize].tau);
            }
        }
        Ok(out)
    }

    /// Raw score vector (`out_dim x 1`) for pair position `pos`.
    pub fn position_scores(&self, pos: usize) -> Tensor {
        let scorer = &self.model.scorer;
        let store = &self.model.store;
        let w = scorer.window as i64;
        let p = self.state.pending.len() as i64;
        let pad_left = store.get("scorer.pad_left").expect("registered");
        let pad_right = store.get("scorer.pad_right").expect("registered");
        let mut window: Vec<&Tensor> = Vec::with_capacity(scorer.slots());
        for offset in -w..w + 2 {
            let idx = pos as i64 + offset;
            if idx < 0 {
                window.push(pad_left);
            } else if idx >= p {
                window.push(pad_right);
            } else {
                window.push(self.tape.value(self.state.pending[idx as usize].tau));
            }
        }
        scorer.score_window_values(store, &window)
    }

    /// Actions the decoder may take, in canonical (position, kind, relation)
    /// order. The root attachment is deferred to the very last step so the
    /// output always has exactly one root arc; the oracle never validates an
    /// earlier root attachment, so no valid action is ever masked.
    pub fn decodable_actions(&self) -> Vec<Action> {
        let p = self.state.pending.len();
        let mut out = Vec::new();
        if p < 2 {
            return out;
        }
        let rels: Vec<usize> = if self.model.hyper.labeled {
            (self.model.first_real_rel()..self.model.rels.len()).collect()
        } else {
            vec![0]
        };
        for position in 0..p - 1 {
            let left_ok = !self.state.pending[position + 1].is_root
                && !(self.state.pending[position].is_root && p > 2);
            let right_ok = !self.state.pending[position].is_root;
            for (ok, kind) in [(left_ok, ActionKind::AttachLeft), (right_ok, ActionKind::AttachRight)] {
                if !ok {
                    continue;
                }
                for &rel in &rels {
                    out.push(Action {
                        kind,
                        position,
                        rel,
                    });
                }
            }
        }
        out
    }

    fn rel_slot(&self, action: &Action) -> usize {
        if self.model.hyper.labeled {
            action.rel
        } else {
            0
        }
    }

    /// Score every decodable action; returns `(action, score)` in canonical
    /// order.
    pub fn score_decodable(&self) -> Vec<(Action, f64)> {
        let actions = self.decodable_actions();
        let mut out = Vec::with_capacity(actions.len());
        let mut cache: Vec<Option<Tensor>> = vec![None; self.state.pending.len()];
        for action in actions {
            if cache[action.position].is_none() {
                cache[action.position] = Some(self.position_scores(action.position));
            }
            let scores = cache[action.position].as_ref().unwrap();
            let row = self.model.scorer.row(action.kind, self.rel_slot(&action));
            out.push((action, scores.data()[row]));
        }
        out
    }

    /// Apply an attachment: record the arc, move the modifier into the
    /// head's children, recompute the head's representation, and drop the
    /// modifier from pending.
    pub fn apply_action(&mut self, action: Action) -> Result<(), ParserError> {
        let p = self.state.pending.len();
        if p < 2 {
            return Err(ParserError::Terminal);
        }
        if action.position + 1 >= p {
            return Err(ParserError::IllegalAction {
                kind: action.kind,
                position: action.position,
                pending: p,
            });
        }
        let (head_idx, mod_idx) = match action.kind {
            ActionKind::AttachLeft => (action.position, action.position + 1),
            ActionKind::AttachRight => (action.position + 1, action.position),
        };
        if self.state.pending[mod_idx].is_root {
            return Err(ParserError::IllegalAction {
                kind: action.kind,
                position: action.position,
                pending: p,
            });
        }

        let modifier = self.state.pending[mod_idx].clone();
        let head_token = self.state.pending[head_idx].token_index;
        self.state.arcs.push(ArcRecord {
            head: head_token,
            modifier: modifier.token_index,
            rel: action.rel,
            side: action.kind,
        });
        self.state.pending[head_idx].children.push(ChildArcRecord {
            token_index: modifier.token_index,
            rel: action.rel,
            side: action.kind,
            tau: modifier.tau,
            cell: modifier.cell,
        });

        if !matches!(self.model.hyper.encoder, EncoderKind::None) {
            // children are referenced, not copied: a later decision loss
            // backpropagates through the whole within-sentence composition
            // history (the tape stays sentence-sized either way)
            let mut refs = Vec::with_capacity(self.state.pending[head_idx].children.len());
            for child in &self.state.pending[head_idx].children {
                refs.push(ChildRef {
                    token_index: child.token_index,
                    rel_id: child.rel,
                    tau: child.tau,
                    cell: child.cell,
                });
            }
            let composed = self.model.encoder.compose(
                &mut self.tape,
                &self.model.store,
                &self.model.embeds,
                head_token,
                &refs,
                self.x[head_token],
            )?;
            self.state.pending[head_idx].tau = composed.tau;
            self.state.pending[head_idx].cell = composed.cell;
        }

        self.state.pending.remove(mod_idx);
        self.state.steps += 1;
        Ok(())
    }

    /// Best decodable action by score, ties broken by canonical order.
    pub fn best_action(&self) -> Option<Action> {
        let mut best: Option<(Action, f64)> = None;
        for (action, score) in self.score_decodable() {
            match &best {
                Some((_, s)) if score <= *s => {}
                _ => best = Some((action, score)),
            }
        }
        best.map(|(a, _)| a)
    }

    /// Predicted arcs, one per token, once the state is terminal.
    pub fn extract_tree(&self) -> PredictedTree {
        let n = self.x.len() - 1;
        let mut heads = vec![0usize; n];
        let mut rels = vec![self.model.no_rel; n];
        for arc in &self.state.arcs {
            heads[arc.modifier - 1] = arc.head;
            rels[arc.modifier - 1] = arc.rel;
        }
        (0..n)
            .map(|i| {
                let rel = if self.model.hyper.labeled {
                    self.model
                        .rels
                        .symbol(rels[i])
                        .unwrap_or("dep")
                        .to_string()
                } else {
                    "dep".to_string()
                };
                (heads[i], rel)
            })
            .collect()
    }
}

/// Greedy decode: apply the highest-scoring decodable action until only the
/// root remains. Exactly `N` actions for `N` tokens (pending starts at
/// `N + 1` entries).
pub fn parse_greedy(
    model: &Model,
    word_ids: &[usize],
    pos_ids: &[usize],
    external: Option<&[Vec<f64>]>,
) -> Result<(PredictedTree, usize), ParserError> {
    let mut session = ParseSession::start(model, word_ids, pos_ids, external)?;
    while !session.state.is_terminal() {
        let action = session.best_action().expect("non-terminal state has actions");
        session.apply_action(action)?;
    }
    Ok((session.extract_tree(), session.state.steps))
}

/// Parse a record directly (id mapping included).
pub fn parse_record(
    model: &Model,
    record: &SentenceRecord,
    external: Option<&[Vec<f64>]>,
) -> Result<PredictedTree, ParserError> {
    let (words, pos) = model.sentence_ids(record);
    Ok(parse_greedy(model, &words, &pos, external)?.0)
}

// ---------------------------------------------------------------------------
// Oracle and trainer
// ---------------------------------------------------------------------------

/// Gold arcs in a training-friendly shape.
#[derive(Debug, Clone)]
pub struct GoldTree {
    /// Head per token (1-based tokens, 0 = root).
    pub heads: Vec<usize>,
    /// Relation id per token.
    pub rels: Vec<usize>,
    /// Number of gold children per position (index 0 = the root token).
    pub child_counts: Vec<usize>,
}

impl GoldTree {
    pub fn new(heads: Vec<usize>, rels: Vec<usize>) -> Self {
        let mut child_counts = vec![0usize; heads.len() + 1];
        for &h in &heads {
            child_counts[h] += 1;
        }
        GoldTree {
            heads,
            rels,
            child_counts,
        }
    }
}

/// An action is valid when its arc is a gold arc, the modifier has already
/// collected every gold child (nothing gets orphaned), and, in labeled
/// mode, the relation matches.
pub fn oracle_valid(state: &ParserState, action: &Action, gold: &GoldTree, labeled: bool) -> bool {
    let p = state.pending.len();
    if action.position + 1 >= p {
        return false;
    }
    let (head_idx, mod_idx) = match action.kind {
        ActionKind::AttachLeft => (action.position, action.position + 1),
        ActionKind::AttachRight => (action.position + 1, action.position),
    };
    let head = &state.pending[head_idx];
    let modifier = &state.pending[mod_idx];
    if modifier.is_root {
        return false;
    }
    let mod_token = modifier.token_index;
    if gold.heads[mod_token - 1] != head.token_index {
        return false;
    }
    if modifier.children.len() != gold.child_counts[mod_token] {
        return false;
    }
    if labeled && action.rel != gold.rels[mod_token - 1] {
        return false;
    }
    true
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub clip_norm: Option<f64>,
    /// Follow the model's prediction when it is valid (error exploration
    /// stays off: transitions always take a valid action).
    pub explore: bool,
    /// Word-dropout strength alpha in `alpha / (alpha + freq)`; 0 disables.
    pub word_dropout_alpha: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            learning_rate: 0.1,
            clip_norm: Some(5.0),
            explore: true,
            word_dropout_alpha: 0.25,
        }
    }
}

/// A sentence prepared for training.
#[derive(Debug, Clone)]
pub struct TrainSentence {
    pub word_ids: Vec<usize>,
    pub pos_ids: Vec<usize>,
    pub gold: GoldTree,
    pub external: Option<Vec<Vec<f64>>>,
    /// Space-joined forms, used in diagnostics only.
    pub text: String,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EpochMetrics {
    pub mean_loss: f64,
    pub decisions: usize,
    pub sentences: usize,
}

/// The hinge for one decision: `max(0, 1 - s(best valid) + s(best invalid))`
/// as a tape node over the two action scores.
pub fn decision_loss(
    session: &mut ParseSession,
    valid: &Action,
    invalid: &Action,
) -> Result<NodeId, ParserError> {
    let scorer = &session.model.scorer;
    let (v_slot, i_slot) = (session.rel_slot(valid), session.rel_slot(invalid));
    let v_window = session.window_nodes(valid.position)?;
    let s_valid = scorer.score_on_tape(
        &mut session.tape,
        &session.model.store,
        &v_window,
        valid.kind,
        v_slot,
    )?;
    let i_window = session.window_nodes(invalid.position)?;
    let s_invalid = scorer.score_on_tape(
        &mut session.tape,
        &session.model.store,
        &i_window,
        invalid.kind,
        i_slot,
    )?;
    // 1 - s_valid + s_invalid via a constant affine map
    let pair = session.tape.concat_rows(&[s_valid, s_invalid])?;
    let w = session
        .tape
        .constant(Tensor::from_vec(1, 2, vec![-1.0, 1.0]).expect("sized"));
    let one = session.tape.constant_scalar(1.0);
    let margin = session.tape.affine(w, pair, one)?;
    // hinge: max(0, margin)
    let zero = session.tape.constant_scalar(0.0);
    let stacked = session.tape.concat_cols(&[zero, margin])?;
    Ok(session.tape.row_max_pool(stacked)?)
}

/// One training pass over a sentence. Decision losses accumulate on the
/// sentence tape; a single backward pass and SGD step happen at the end.
/// Returns `(loss sum, decisions)`.
fn train_sentence(
    model: &Model,
    sentence: &TrainSentence,
    opts: &TrainOptions,
    word_freq: &[u64],
    rng: &mut impl Rng,
    grads_out: &mut Vec<(String, Tensor)>,
) -> Result<(f64, usize), ParserError> {
    // word dropout to UNK, training only
    let mut word_ids = sentence.word_ids.clone();
    if opts.word_dropout_alpha > 0.0 {
        for id in word_ids.iter_mut() {
            let freq = word_freq.get(*id).copied().unwrap_or(0) as f64;
            let p = opts.word_dropout_alpha / (opts.word_dropout_alpha + freq);
            if rng.gen::<f64>() < p {
                *id = UNK_ID;
            }
        }
    }

    let mut session = ParseSession::start(model, &word_ids, &sentence.pos_ids, sentence.external.as_deref())?;
    let labeled = model.hyper.labeled;
    let mut losses = Vec::new();
    let mut loss_sum = 0.0;
    let mut decisions = 0usize;

    while !session.state.is_terminal() {
        let scored = session.score_decodable();
        let mut best_valid: Option<(Action, f64)> = None;
        let mut best_invalid: Option<(Action, f64)> = None;
        let mut best_overall: Option<(Action, f64, bool)> = None;
        for (action, score) in scored {
            let valid = oracle_valid(&session.state, &action, &sentence.gold, labeled);
            let slot = if valid {
                &mut best_valid
            } else {
                &mut best_invalid
            };
            match slot {
                Some((_, s)) if score <= *s => {}
                _ => *slot = Some((action, score)),
            }
            match &best_overall {
                Some((_, s, _)) if score <= *s => {}
                _ => best_overall = Some((action, score, valid)),
            }
        }
        let Some((valid_action, valid_score)) = best_valid else {
            return Err(ParserError::OracleDeadlock(sentence.text.clone()));
        };

        if let Some((invalid_action, invalid_score)) = best_invalid {
            let margin = 1.0 - valid_score + invalid_score;
            if margin > 0.0 {
                let loss = decision_loss(&mut session, &valid_action, &invalid_action)?;
                loss_sum += session.tape.value(loss).item();
                losses.push(loss);
            }
        }
        decisions += 1;

        let (_, _, overall_valid) = best_overall.expect("scored at least one action");
        let next = if opts.explore && overall_valid {
            best_overall.unwrap().0
        } else {
            valid_action
        };
        session.apply_action(next)?;
    }

    if !losses.is_empty() {
        let total = session.tape.sum_list(&losses, (1, 1))?;
        session.tape.backward(total)?;
        for (name, grad) in session.tape.param_grads() {
            grads_out.push((name.to_string(), grad.clone()));
        }
    }
    Ok((loss_sum, decisions))
}

/// One epoch of margin training with per-sentence updates. Sentence order
/// is shuffled with the caller's RNG.
pub fn train_epoch(
    model: &mut Model,
    corpus: &[TrainSentence],
    word_freq: &[u64],
    opts: &TrainOptions,
    rng: &mut impl Rng,
) -> Result<EpochMetrics, ParserError> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(rng);

    let sgd = Sgd::new(opts.learning_rate, opts.clip_norm);
    let mut loss_sum = 0.0;
    let mut decisions = 0usize;
    let mut grads: Vec<(String, Tensor)> = Vec::new();

    for &idx in &order {
        grads.clear();
        let (loss, steps) =
            train_sentence(model, &corpus[idx], opts, word_freq, rng, &mut grads)?;
        loss_sum += loss;
        decisions += steps;
        if !grads.is_empty() {
            let pairs: Vec<(&str, &Tensor)> =
                grads.iter().map(|(n, g)| (n.as_str(), g)).collect();
            sgd.step(&mut model.store, &pairs)?;
        }
    }
    Ok(EpochMetrics {
        mean_loss: if decisions == 0 {
            0.0
        } else {
            loss_sum / decisions as f64
        },
        decisions,
        sentences: corpus.len(),
    })
}

/// Prepare records for training, dropping non-projective and unannotated
/// sentences (easy-first attachment over adjacent pending nodes can only
/// derive projective trees). Returns the prepared corpus, the word
/// frequency table for dropout, and the skipped count.
pub fn prepare_training(
    model: &Model,
    records: &[SentenceRecord],
    external: Option<&[Vec<Vec<f64>>]>,
) -> (Vec<TrainSentence>, Vec<u64>, usize) {
    let mut corpus = Vec::new();
    let mut skipped = 0usize;
    let mut freq = vec![0u64; model.words.len()];
    for (i, rec) in records.iter().enumerate() {
        let Some(heads) = rec.gold_heads() else {
            skipped += 1;
            continue;
        };
        if !crate::conll::is_projective(&heads) {
            skipped += 1;
            continue;
        }
        let (word_ids, pos_ids) = model.sentence_ids(rec);
        for &id in &word_ids {
            freq[id] += 1;
        }
        let rels = rec
            .tokens
            .iter()
            .map(|t| {
                t.rel
                    .as_deref()
                    .map(|r| self_or_unk(&model.rels, r))
                    .unwrap_or(model.no_rel)
            })
            .collect();
        corpus.push(TrainSentence {
            word_ids,
            pos_ids,
            gold: GoldTree::new(heads, rels),
            external: external.and_then(|e| e.get(i).cloned()),
            text: rec
                .tokens
                .iter()
                .map(|t| t.form.as_str())
                .collect::<Vec<_>>()
                .join(" "),
        });
    }
    (corpus, freq, skipped)
}

fn self_or_unk(rels: &crate::vocab::Vocab, r: &str) -> usize {
    rels.id_or_unk(r)
}

/// From-scratch recursive recomputation of one token's representation over
/// the arcs committed so far, on a fresh tape. Used to check that the
/// incrementally maintained representation matches exactly.
pub fn recompute_recursive(
    model: &Model,
    x_values: &[Tensor],
    arcs: &[ArcRecord],
    token: usize,
    tape: &mut Tape,
) -> Result<crate::subtree::Composed, ParserError> {
    let mut children: Vec<&ArcRecord> = arcs.iter().filter(|a| a.head == token).collect();
    children.sort_by_key(|a| a.modifier);
    let x = tape.constant(x_values[token].clone());
    if children.is_empty() {
        return Ok(model.encoder.leaf(tape, &model.store, x)?);
    }
    let mut refs = Vec::with_capacity(children.len());
    for arc in children {
        let child = recompute_recursive(model, x_values, arcs, arc.modifier, tape)?;
        let tau_val = tape.value(child.tau).clone();
        let cell_val = tape.value(child.cell).clone();
        refs.push(ChildRef {
            token_index: arc.modifier,
            rel_id: arc.rel,
            tau: tape.constant(tau_val),
            cell: tape.constant(cell_val),
        });
    }
    Ok(model
        .encoder
        .compose(tape, &model.store, &model.embeds, token, &refs, x)?)
}
