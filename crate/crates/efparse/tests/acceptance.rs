//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its runtime. Run with `cargo test --test acceptance -- --nocapture` to
//! see the lines; every bound is asserted.

use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use efparse::conll::{is_projective, is_well_formed_tree, SentenceRecord, Token};
use efparse::eval::{attachment_scores, error_profile, PosGroupTable, PunctuationPolicy};
use efparse::model::{build_vocabs, HyperParams, Model};
use efparse::parser::{
    decision_loss, oracle_valid, parse_greedy, parse_record, prepare_training, recompute_recursive,
    train_epoch, Action, ActionKind, ChildArcRecord, ParseSession, ParserState, PendingEntry,
    TrainOptions,
};
use efparse::subtree::{compose_rcnn, compose_tree_lstm, EncoderKind, GatedChild, RcnnParams, TreeLstmParams};
use efparse::synth::{generate_corpus, random_projective_tree};
use efparse::tape::{gradient_check, Tape};
use efparse::tensor::Tensor;
use efparse::vocab::{Vocab, NO_REL_SYMBOL};
use efparse::ParameterStore;

fn pass(name: &str, started: Instant) {
    println!("ACCEPTANCE {name}: PASS ({:.2?})", started.elapsed());
}

fn tiny_hyper(encoder: EncoderKind) -> HyperParams {
    HyperParams {
        word_dim: 5,
        pos_dim: 4,
        dist_dim: 3,
        rel_dim: 3,
        distance_cap: 5,
        bilstm_hidden: 6,
        tree_dim: 7,
        scorer_hidden: 8,
        window: 2,
        encoder,
        labeled: true,
        external_dim: 0,
    }
}

fn tiny_model(encoder: EncoderKind, seed: u64) -> Model {
    let mut words = Vocab::new();
    for w in ["a", "b", "c", "d", "e", "f", "g", "h"] {
        words.intern(w);
    }
    let mut pos = Vocab::new();
    for p in ["NN", "VB", "DT"] {
        pos.intern(p);
    }
    let mut rels = Vocab::new();
    rels.intern(NO_REL_SYMBOL);
    for r in ["root", "dep", "mod"] {
        rels.intern(r);
    }
    Model::new(tiny_hyper(encoder), words, pos, rels, seed).unwrap()
}

fn randomize_params(model: &mut Model, scale: f64, seed: u64) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let names: Vec<String> = model.store.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        for v in model.store.get_mut(&name).unwrap().data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

// -------------------------------------------------------------------------
// Criterion: gradient suite (composers, scorer, sentence encoder, and one
// full decision-step loss) against central finite differences, eps = 1e-5,
// max relative error <= 1e-5, within one minute.
// -------------------------------------------------------------------------
#[test]
fn gradient_suite() {
    let started = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(42);

    // feature gate
    let mut store = ParameterStore::new();
    store.insert_uniform("gate.w", 4, 8, 0.5, &mut rng).unwrap();
    store.insert_uniform("gate.b", 4, 1, 0.5, &mut rng).unwrap();
    let gate = efparse::subtree::FeatureGateParams::attached("gate", 8, 4);
    let max_rel = gradient_check(
        |tape, store| {
            let tau = tape.constant(Tensor::col(&[0.2, -0.4, 0.6, 0.1]));
            let vd = tape.constant(Tensor::col(&[0.3, -0.1]));
            let vr = tape.constant(Tensor::col(&[-0.5, 0.2]));
            let g = gate.apply(tape, store, tau, vd, vr).map_err(sub_to_ad)?;
            let a = tape.select_row(g, 0)?;
            let b = tape.select_row(g, 3)?;
            Ok(tape.mul(a, b)?)
        },
        &mut store,
        1e-5,
    )
    .unwrap();
    assert!(max_rel <= 1e-5, "gate: {max_rel}");

    // child-sum tree-LSTM with three children
    let mut store = ParameterStore::new();
    let tree = TreeLstmParams::register(&mut store, "tree", 4, 4, &mut rng).unwrap();
    let max_rel = gradient_check(
        |tape, store| {
            let x = tape.constant(Tensor::col(&[0.5, -0.2, 0.8, 0.05]));
            let children: Vec<GatedChild> = (0..3)
                .map(|k| GatedChild {
                    token_index: k + 1,
                    gated: tape.constant(Tensor::col(&[0.1 * k as f64, -0.3, 0.4, 0.2])),
                    cell: tape.constant(Tensor::col(&[0.2, 0.1 * k as f64, -0.1, 0.3])),
                })
                .collect();
            let out = compose_tree_lstm(tape, store, &tree, &children, x).map_err(sub_to_ad)?;
            let a = tape.select_row(out.tau, 0)?;
            let b = tape.select_row(out.tau, 3)?;
            Ok(tape.add(a, b)?)
        },
        &mut store,
        1e-5,
    )
    .unwrap();
    assert!(max_rel <= 1e-5, "tree-lstm: {max_rel}");

    // simplified-convolution composer
    let mut store = ParameterStore::new();
    let rcnn = RcnnParams::register(&mut store, "rcnn.w", 3, 2, 4, &mut rng).unwrap();
    let max_rel = gradient_check(
        |tape, store| {
            let x = tape.constant(Tensor::col(&[0.4, 0.2, -0.9]));
            let children: Vec<GatedChild> = (0..2)
                .map(|k| GatedChild {
                    token_index: k + 1,
                    gated: tape.constant(Tensor::col(&[0.3 - k as f64, 0.7])),
                    cell: tape.constant(Tensor::zeros(4, 1)),
                })
                .collect();
            let out = compose_rcnn(tape, store, &rcnn, &children, x).map_err(sub_to_ad)?;
            let a = tape.select_row(out.tau, 1)?;
            let b = tape.select_row(out.tau, 2)?;
            Ok(tape.mul(a, b)?)
        },
        &mut store,
        1e-5,
    )
    .unwrap();
    assert!(max_rel <= 1e-5, "rcnn: {max_rel}");

    // sentence encoder over five positions
    let mut store = ParameterStore::new();
    let bilstm =
        efparse::bilstm::BiLstm::register(&mut store, "bilstm", 2, 2, &mut rng).unwrap();
    let max_rel = gradient_check(
        |tape, store| {
            let xs: Vec<_> = [
                Tensor::col(&[0.5, -0.2]),
                Tensor::col(&[0.1, 0.9]),
                Tensor::col(&[0.3, 0.3]),
                Tensor::col(&[-0.2, 0.6]),
                Tensor::col(&[0.8, -0.5]),
            ]
            .into_iter()
            .map(|t| tape.constant(t))
            .collect();
            let ctx = bilstm.encode_sentence(tape, store, &xs).map_err(|e| match e {
                efparse::bilstm::EncodeError::Autodiff(a) => a,
                efparse::bilstm::EncodeError::Tensor(t) => t.into(),
                efparse::bilstm::EncodeError::EmptySentence => unreachable!(),
            })?;
            let mut acc = tape.constant(Tensor::scalar(0.0));
            for &x in &ctx.x {
                let a = tape.select_row(x, 0)?;
                let b = tape.select_row(x, 3)?;
                let p = tape.mul(a, b)?;
                acc = tape.add(acc, p)?;
            }
            Ok(acc)
        },
        &mut store,
        1e-5,
    )
    .unwrap();
    assert!(max_rel <= 1e-5, "sentence encoder: {max_rel}");

    // action scorer
    let mut store = ParameterStore::new();
    let scorer =
        efparse::parser::Scorer::register(&mut store, 3, 5, 2, 2, &mut rng).unwrap();
    let max_rel = gradient_check(
        |tape, store| {
            let window: Vec<_> = (0..6)
                .map(|i| tape.constant(Tensor::col(&[0.1 * i as f64, -0.2, 0.3])))
                .collect();
            scorer
                .score_on_tape(tape, store, &window, ActionKind::AttachLeft, 1)
                .map_err(parse_to_ad)
        },
        &mut store,
        1e-5,
    )
    .unwrap();
    assert!(max_rel <= 1e-5, "scorer: {max_rel}");

    // one full decision-step loss at a generic parameter point
    decision_step_fd();

    assert!(started.elapsed() < Duration::from_secs(60));
    pass("gradient-suite", started);
}

fn sub_to_ad(e: efparse::subtree::SubtreeError) -> efparse::tape::AutodiffError {
    match e {
        efparse::subtree::SubtreeError::Autodiff(a) => a,
        efparse::subtree::SubtreeError::Tensor(t) => t.into(),
        other => panic!("unexpected: {other}"),
    }
}

fn parse_to_ad(e: efparse::parser::ParserError) -> efparse::tape::AutodiffError {
    match e {
        efparse::parser::ParserError::Autodiff(a) => a,
        efparse::parser::ParserError::Tensor(t) => t.into(),
        other => panic!("unexpected: {other}"),
    }
}

/// Finite differences over the margin loss of one decision step. Entries
/// below the resolution floor of central differences (the loss is O(1), so
/// differences carry ~1e-11 of rounding noise) are held to an absolute
/// bound instead of a relative one.
fn decision_step_fd() {
    let mut model = tiny_model(EncoderKind::TreeLstm, 123);
    randomize_params(&mut model, 0.5, 99);
    let gold = efparse::parser::GoldTree::new(vec![2, 0, 2], vec![5, 6, 5]);
    let words = vec![4, 5, 6];
    let pos = vec![4, 5, 4];

    let build = |model: &Model| -> (f64, Vec<(String, Tensor)>) {
        let mut session = ParseSession::start(model, &words, &pos, None).unwrap();
        let mut valid = None;
        let mut invalid = None;
        for action in session.decodable_actions() {
            if oracle_valid(&session.state, &action, &gold, true) {
                valid.get_or_insert(action);
            } else {
                invalid.get_or_insert(action);
            }
        }
        let loss = decision_loss(&mut session, &valid.unwrap(), &invalid.unwrap()).unwrap();
        let value = session.tape.value(loss).item();
        session.tape.backward(loss).unwrap();
        let grads = session
            .tape
            .param_grads()
            .into_iter()
            .map(|(n, g)| (n.to_string(), g.clone()))
            .collect();
        (value, grads)
    };

    let (loss0, grads) = build(&model);
    assert!(loss0 > 0.05, "hinge inactive: {loss0}");
    let eps = 1e-5;
    let mut max_rel = 0.0f64;
    let mut max_abs_small = 0.0f64;
    for (name, grad) in &grads {
        for idx in (0..grad.len()).step_by(9) {
            let orig = model.store.get(name).unwrap().data()[idx];
            model.store.get_mut(name).unwrap().data_mut()[idx] = orig + eps;
            let (lp, _) = build(&model);
            model.store.get_mut(name).unwrap().data_mut()[idx] = orig - eps;
            let (lm, _) = build(&model);
            model.store.get_mut(name).unwrap().data_mut()[idx] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            let a = grad.data()[idx];
            if a.abs() + numeric.abs() >= 1e-4 {
                max_rel = max_rel.max((a - numeric).abs() / (a.abs() + numeric.abs()));
            } else {
                max_abs_small = max_abs_small.max((a - numeric).abs());
            }
        }
    }
    assert!(max_rel <= 1e-5, "decision loss: {max_rel}");
    assert!(max_abs_small < 1e-9, "decision loss small entries: {max_abs_small}");
}

// -------------------------------------------------------------------------
// Criterion: state machine. 1000 random sentences of lengths 1-12 under
// random parameters parse with exactly N-1 actions (pending starts at the
// N-token sentence plus the root and ends at the root alone) and yield
// single-rooted, acyclic, projective trees, within one minute.
// -------------------------------------------------------------------------
#[test]
fn state_machine_suite() {
    let started = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let mut model = tiny_model(EncoderKind::TreeLstm, 1);
    randomize_params(&mut model, 0.4, 2);

    for case in 0..1000 {
        let n = rng.gen_range(1..=12);
        let words: Vec<usize> = (0..n).map(|_| rng.gen_range(4..model.words.len())).collect();
        let pos: Vec<usize> = (0..n).map(|_| rng.gen_range(4..model.pos.len())).collect();
        let (tree, steps) = parse_greedy(&model, &words, &pos, None).unwrap();
        assert_eq!(steps, n, "case {case}: actions != token count");
        let heads: Vec<usize> = tree.iter().map(|(h, _)| *h).collect();
        assert!(is_well_formed_tree(&heads), "case {case}: {heads:?}");
        assert!(is_projective(&heads), "case {case}: {heads:?}");
        assert_eq!(heads.iter().filter(|&&h| h == 0).count(), 1);
    }
    assert!(started.elapsed() < Duration::from_secs(60));
    pass("state-machine-suite", started);
}

// -------------------------------------------------------------------------
// Criterion: oracle completeness. For 200 random projective gold trees of
// length <= 5, exhaustively following every valid-action order terminates
// in exactly the gold arc set.
// -------------------------------------------------------------------------
#[test]
fn oracle_completeness() {
    let started = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(13);

    // a dummy tape gives the pending entries their (unused) node ids
    let mut tape = Tape::new();
    let dummy = tape.constant(Tensor::scalar(0.0));

    let mut trees_checked = 0;
    let mut trajectories = 0u64;
    while trees_checked < 200 {
        let n = rng.gen_range(1..=5);
        let heads = random_projective_tree(n, &mut rng);
        let rels: Vec<usize> = (0..n).map(|_| 5).collect();
        let gold = efparse::parser::GoldTree::new(heads.clone(), rels.clone());

        let pending: Vec<PendingEntry> = (0..=n)
            .map(|token_index| PendingEntry {
                token_index,
                is_root: token_index == 0,
                tau: dummy,
                cell: dummy,
                children: Vec::new(),
            })
            .collect();
        let state = ParserState {
            pending,
            arcs: Vec::new(),
            steps: 0,
        };
        let mut gold_arcs: Vec<(usize, usize)> = heads
            .iter()
            .enumerate()
            .map(|(i, &h)| (h, i + 1))
            .collect();
        gold_arcs.sort_unstable();
        trajectories += explore(&state, &gold, &gold_arcs, dummy);
        trees_checked += 1;
    }
    assert!(trajectories >= 200);
    assert!(started.elapsed() < Duration::from_secs(60));
    pass("oracle-completeness", started);
}

/// Depth-first search over every valid-action order; panics on a deadlock
/// or on terminating away from the gold arc set. Returns the number of
/// completed trajectories.
fn explore(
    state: &ParserState,
    gold: &efparse::parser::GoldTree,
    gold_arcs: &[(usize, usize)],
    dummy: efparse::tape::NodeId,
) -> u64 {
    if state.pending.len() == 1 {
        assert!(state.pending[0].is_root, "terminal without root");
        let mut arcs: Vec<(usize, usize)> = state
            .arcs
            .iter()
            .map(|a| (a.head, a.modifier))
            .collect();
        arcs.sort_unstable();
        assert_eq!(arcs, gold_arcs, "trajectory ended off the gold tree");
        return 1;
    }
    let mut total = 0;
    let mut any_valid = false;
    for position in 0..state.pending.len() - 1 {
        for kind in [ActionKind::AttachLeft, ActionKind::AttachRight] {
            let action = Action {
                kind,
                position,
                rel: 5,
            };
            if !oracle_valid(state, &action, gold, true) {
                continue;
            }
            any_valid = true;
            let mut next = state.clone();
            let (head_idx, mod_idx) = match kind {
                ActionKind::AttachLeft => (position, position + 1),
                ActionKind::AttachRight => (position + 1, position),
            };
            let modifier = next.pending[mod_idx].clone();
            let head_token = next.pending[head_idx].token_index;
            next.arcs.push(efparse::parser::ArcRecord {
                head: head_token,
                modifier: modifier.token_index,
                rel: 5,
                side: kind,
            });
            next.pending[head_idx].children.push(ChildArcRecord {
                token_index: modifier.token_index,
                rel: 5,
                side: kind,
                tau: dummy,
                cell: dummy,
            });
            next.pending.remove(mod_idx);
            next.steps += 1;
            total += explore(&next, gold, gold_arcs, dummy);
        }
    }
    assert!(any_valid, "oracle deadlock in a reachable state");
    total
}

// -------------------------------------------------------------------------
// Criterion: after every action of 100 random oracle trajectories, the
// incrementally maintained representation of every pending entry equals a
// from-scratch recursive recomputation bit for bit.
// -------------------------------------------------------------------------
#[test]
fn incremental_equals_recursive() {
    let started = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(23);

    for trajectory in 0..100 {
        let encoder = if trajectory % 2 == 0 {
            EncoderKind::TreeLstm
        } else {
            EncoderKind::Rcnn
        };
        let mut model = tiny_model(encoder, 3 + trajectory as u64);
        randomize_params(&mut model, 0.3, 100 + trajectory as u64);

        let n = rng.gen_range(2..=7);
        let heads = random_projective_tree(n, &mut rng);
        let rels: Vec<usize> = (0..n).map(|_| 5 + (rng.gen_range(0..2))).collect();
        let gold = efparse::parser::GoldTree::new(heads, rels);
        let words: Vec<usize> = (0..n).map(|_| rng.gen_range(4..model.words.len())).collect();
        let pos: Vec<usize> = (0..n).map(|_| rng.gen_range(4..model.pos.len())).collect();

        let mut session = ParseSession::start(&model, &words, &pos, None).unwrap();
        let x_values: Vec<Tensor> = session
            .x
            .iter()
            .map(|&id| session.tape.value(id).clone())
            .collect();
        while !session.state.is_terminal() {
            let valid: Vec<Action> = session
                .decodable_actions()
                .into_iter()
                .filter(|a| oracle_valid(&session.state, a, &gold, true))
                .collect();
            let pick = valid[rng.gen_range(0..valid.len())];
            session.apply_action(pick).unwrap();

            for entry in &session.state.pending {
                let mut fresh = Tape::new();
                let again = recompute_recursive(
                    &model,
                    &x_values,
                    &session.state.arcs,
                    entry.token_index,
                    &mut fresh,
                )
                .unwrap();
                let incremental = session.tape.value(entry.tau);
                let recursive = fresh.value(again.tau);
                assert_eq!(incremental.data().len(), recursive.data().len());
                for (a, b) in incremental.data().iter().zip(recursive.data()) {
                    assert_eq!(a.to_bits(), b.to_bits(), "trajectory {trajectory}");
                }
            }
        }
    }
    assert!(started.elapsed() < Duration::from_secs(60));
    pass("incremental-equals-recursive", started);
}

// -------------------------------------------------------------------------
// Criterion: 1000 random (children, x) samples. Permuting children leaves
// the child-sum composition bit-identical; duplicating a child leaves the
// pooled composition unchanged.
// -------------------------------------------------------------------------
#[test]
fn permutation_invariance() {
    let started = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    let dim = 4;
    let mut store = ParameterStore::new();
    let tree = TreeLstmParams::register(&mut store, "tree", 3, dim, &mut rng).unwrap();
    let rcnn = RcnnParams::register(&mut store, "rcnn.w", 3, dim, dim, &mut rng).unwrap();

    for _ in 0..1000 {
        let mut tape = Tape::new();
        let x = {
            let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            tape.constant(Tensor::col(&v))
        };
        let k = rng.gen_range(1..=5);
        let children: Vec<GatedChild> = (0..k)
            .map(|i| {
                let g: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let c: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                GatedChild {
                    token_index: i + 1,
                    gated: tape.constant(Tensor::col(&g)),
                    cell: tape.constant(Tensor::col(&c)),
                }
            })
            .collect();
        let mut permuted = children.clone();
        permuted.shuffle(&mut rng);

        let a = compose_tree_lstm(&mut tape, &store, &tree, &children, x).unwrap();
        let b = compose_tree_lstm(&mut tape, &store, &tree, &permuted, x).unwrap();
        for (u, v) in tape
            .value(a.tau)
            .data()
            .iter()
            .zip(tape.value(b.tau).data())
        {
            assert_eq!(u.to_bits(), v.to_bits());
        }
        for (u, v) in tape
            .value(a.cell)
            .data()
            .iter()
            .zip(tape.value(b.cell).data())
        {
            assert_eq!(u.to_bits(), v.to_bits());
        }

        // pooled composer: duplicating one child is a no-op
        let p = compose_rcnn(&mut tape, &store, &rcnn, &children, x).unwrap();
        let mut duplicated = children.clone();
        let dup = duplicated[rng.gen_range(0..k)];
        duplicated.push(GatedChild {
            token_index: k + 1,
            ..dup
        });
        let q = compose_rcnn(&mut tape, &store, &rcnn, &duplicated, x).unwrap();
        for (u, v) in tape
            .value(p.tau)
            .data()
            .iter()
            .zip(tape.value(q.tau).data())
        {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }
    assert!(started.elapsed() < Duration::from_secs(60));
    pass("permutation-invariance", started);
}

// -------------------------------------------------------------------------
// Criterion: overfitting. A 50-sentence synthetic treebank reaches >= 99%
// training UAS within 30 epochs, in under five minutes on one core.
// -------------------------------------------------------------------------
#[test]
fn overfitting_oracle() {
    let started = Instant::now();
    let corpus_records = generate_corpus(50, &mut ChaCha20Rng::seed_from_u64(501));
    let (words, pos, rels) = build_vocabs(&corpus_records);
    let hyper = HyperParams {
        word_dim: 32,
        pos_dim: 8,
        dist_dim: 8,
        rel_dim: 8,
        distance_cap: 10,
        bilstm_hidden: 32,
        tree_dim: 32,
        scorer_hidden: 64,
        window: 2,
        encoder: EncoderKind::TreeLstm,
        labeled: true,
        external_dim: 0,
    };
    let mut model = Model::new(hyper, words, pos, rels, 11).unwrap();
    let (corpus, freq, skipped) = prepare_training(&model, &corpus_records, None);
    assert_eq!(skipped, 0);
    let opts = TrainOptions {
        word_dropout_alpha: 0.0, // memorization run
        ..TrainOptions::default()
    };
    let mut rng = ChaCha20Rng::seed_from_u64(12);

    let mut best = 0.0f64;
    for epoch in 1..=30 {
        train_epoch(&mut model, &corpus, &freq, &opts, &mut rng).unwrap();
        let trees: Vec<_> = corpus_records
            .iter()
            .map(|r| parse_record(&model, r, None).unwrap())
            .collect();
        let report = attachment_scores(
            &corpus_records,
            &trees,
            &PunctuationPolicy::default(),
            &PosGroupTable::default(),
            5,
        )
        .unwrap();
        best = best.max(report.uas);
        if best >= 0.99 {
            println!("  memorized at epoch {epoch}: train UAS {:.4}", report.uas);
            break;
        }
    }
    assert!(best >= 0.99, "training UAS only reached {best:.4}");
    assert!(started.elapsed() < Duration::from_secs(300));
    pass("overfitting-oracle", started);
}

// -------------------------------------------------------------------------
// Criterion: generalization. On a 2000-sentence synthetic treebank, the
// subtree-encoder configuration beats the sequence-encoder-only baseline
// by at least 0.5 UAS on a held-out set (direction, not magnitude), within
// two hours.
// -------------------------------------------------------------------------
#[test]
fn generalization_smoke_test() {
    let started = Instant::now();
    let mut data_rng = ChaCha20Rng::seed_from_u64(2024);
    let train = generate_corpus(2000, &mut data_rng);
    let dev = generate_corpus(300, &mut data_rng);
    let (words, pos, rels) = build_vocabs(&train);

    let run = |encoder: EncoderKind| -> f64 {
        let hyper = HyperParams {
            word_dim: 64,
            pos_dim: 16,
            dist_dim: 16,
            rel_dim: 16,
            distance_cap: 10,
            bilstm_hidden: 64,
            tree_dim: 64,
            scorer_hidden: 128,
            window: 2,
            encoder,
            labeled: true,
            external_dim: 0,
        };
        let mut model =
            Model::new(hyper, words.clone(), pos.clone(), rels.clone(), 7).unwrap();
        let (corpus, freq, _) = prepare_training(&model, &train, None);
        let opts = TrainOptions::default();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let mut best = 0.0f64;
        for epoch in 1..=12 {
            train_epoch(&mut model, &corpus, &freq, &opts, &mut rng).unwrap();
            let trees: Vec<_> = dev
                .iter()
                .map(|r| parse_record(&model, r, None).unwrap())
                .collect();
            let report = attachment_scores(
                &dev,
                &trees,
                &PunctuationPolicy::default(),
                &PosGroupTable::default(),
                5,
            )
            .unwrap();
            println!("  {encoder:?} epoch {epoch}: dev UAS {:.4}", report.uas);
            best = best.max(report.uas);
        }
        best
    };

    let baseline = run(EncoderKind::None);
    let tree = run(EncoderKind::TreeLstm);
    println!("  baseline {baseline:.4} vs subtree encoder {tree:.4}");
    assert!(
        tree >= baseline + 0.005,
        "subtree encoder {tree:.4} did not beat baseline {baseline:.4} by 0.5 points"
    );
    assert!(started.elapsed() < Duration::from_secs(7200));
    pass("generalization-smoke-test", started);
}

// -------------------------------------------------------------------------
// Criterion: metric fixtures. Five hand-counted attachment-score fixtures
// reproduce exactly; the error profile reproduces hand-counted rates.
// -------------------------------------------------------------------------
#[test]
fn metric_fixtures() {
    let started = Instant::now();
    let policy = PunctuationPolicy::default();
    let groups = PosGroupTable::default();

    let sentence = |specs: &[(&str, usize, &str)]| -> SentenceRecord {
        SentenceRecord::from_tokens(
            specs
                .iter()
                .enumerate()
                .map(|(i, (p, h, r))| Token::new(i + 1, &format!("w{i}"), p, *h, r))
                .collect(),
        )
    };
    let pred = |arcs: &[(usize, &str)]| -> Vec<(usize, String)> {
        arcs.iter().map(|(h, r)| (*h, r.to_string())).collect()
    };

    // 1: all correct, no punctuation -> 1.0 / 1.0
    let gold = vec![sentence(&[("NN", 2, "nsubj"), ("VBZ", 0, "root")])];
    let p = vec![pred(&[(2, "nsubj"), (0, "root")])];
    let r = attachment_scores(&gold, &p, &policy, &groups, 5).unwrap();
    assert_eq!((r.uas, r.las), (1.0, 1.0));
    assert_eq!((r.counted_tokens, r.excluded_tokens), (2, 0));

    // 2: 10 tokens, 2 punctuation both wrong, 8 heads correct, 6 labels
    // correct -> uas 1.0, las 0.75
    let gold = vec![sentence(&[
        ("NN", 3, "nsubj"),
        ("JJ", 3, "amod"),
        ("VBZ", 0, "root"),
        ("DT", 3, "dobj"),
        ("NN", 3, "iobj"),
        ("DT", 3, "det"),
        ("NN", 3, "nmod"),
        ("RB", 3, "advmod"),
        (".", 3, "punct"),
        (",", 3, "punct"),
    ])];
    let p = vec![pred(&[
        (3, "nsubj"),
        (3, "amod"),
        (0, "root"),
        (3, "dobj"),
        (3, "iobj"),
        (3, "det"),
        (3, "dep"),
        (3, "dep"),
        (5, "dep"),
        (5, "dep"),
    ])];
    let r = attachment_scores(&gold, &p, &policy, &groups, 5).unwrap();
    assert_eq!((r.uas, r.las), (1.0, 0.75));
    assert_eq!((r.counted_tokens, r.excluded_tokens), (8, 2));

    // 3: heads right, labels all wrong -> uas 1, las 0
    let gold = vec![sentence(&[("NN", 2, "nsubj"), ("VBZ", 0, "root")])];
    let p = vec![pred(&[(2, "x"), (0, "y")])];
    let r = attachment_scores(&gold, &p, &policy, &groups, 5).unwrap();
    assert_eq!((r.uas, r.las), (1.0, 0.0));

    // 4: two sentences. First: 3 tokens, heads correct on 2 (labels match
    // on those 2). Second: 4 tokens with 1 punct (wrong head, excluded),
    // heads correct on 2 of the 3 counted, labels on 1.
    // counted = 3 + 3 = 6; heads = 2 + 2 = 4 -> uas 4/6; labels 2 + 1 = 3
    // -> las 3/6.
    let gold = vec![
        sentence(&[("NN", 2, "nsubj"), ("VBZ", 0, "root"), ("RB", 2, "advmod")]),
        sentence(&[
            ("DT", 2, "det"),
            ("NN", 3, "nsubj"),
            ("VBZ", 0, "root"),
            (".", 3, "punct"),
        ]),
    ];
    let p = vec![
        pred(&[(2, "nsubj"), (0, "root"), (1, "advmod")]),
        pred(&[(3, "det"), (3, "bogus"), (0, "root")]),
    ];
    let mut p2 = p;
    p2[1].push((1, "punct".to_string())); // punct head wrong (gold 3)
    let r = attachment_scores(&gold, &p2, &policy, &groups, 5).unwrap();
    assert_eq!((r.counted_tokens, r.excluded_tokens), (6, 1));
    assert!((r.uas - 4.0 / 6.0).abs() < 1e-15);
    assert!((r.las - 3.0 / 6.0).abs() < 1e-15);

    // 5: punctuation-only errors leave a perfect score
    let gold = vec![sentence(&[
        ("NN", 2, "nsubj"),
        ("VBZ", 0, "root"),
        (".", 2, "punct"),
    ])];
    let p = vec![pred(&[(2, "nsubj"), (0, "root"), (1, "punct")])];
    let r = attachment_scores(&gold, &p, &policy, &groups, 5).unwrap();
    assert_eq!((r.uas, r.las), (1.0, 1.0));
    assert_eq!((r.counted_tokens, r.excluded_tokens), (2, 1));

    // error profile: 7 tokens, one head error on a noun -> bin 6-10 rate
    // 1/7, noun rate 1/3
    let gold = vec![sentence(&[
        ("DT", 2, "det"),
        ("NN", 3, "nsubj"),
        ("VBZ", 0, "root"),
        ("DT", 5, "det"),
        ("NN", 3, "dobj"),
        ("IN", 5, "prep"),
        ("NN", 6, "pobj"),
    ])];
    let p = vec![pred(&[
        (2, "det"),
        (3, "nsubj"),
        (0, "root"),
        (5, "det"),
        (6, "dobj"),
        (5, "prep"),
        (6, "pobj"),
    ])];
    let (bins, pos_rates) = error_profile(&gold, &p, &policy, &groups, 5).unwrap();
    assert_eq!(bins[1].bucket, "6-10");
    assert_eq!((bins[1].errors, bins[1].total), (1, 7));
    assert!((bins[1].rate - 1.0 / 7.0).abs() < 1e-15);
    let noun = pos_rates.iter().find(|g| g.bucket == "noun").unwrap();
    assert_eq!((noun.errors, noun.total), (1, 3));
    assert!((noun.rate - 1.0 / 3.0).abs() < 1e-15);

    // all-correct profile is all-zero
    let p_perfect = vec![pred(&[
        (2, "det"),
        (3, "nsubj"),
        (0, "root"),
        (5, "det"),
        (3, "dobj"),
        (5, "prep"),
        (6, "pobj"),
    ])];
    let (bins, pos_rates) = error_profile(&gold, &p_perfect, &policy, &groups, 5).unwrap();
    assert!(bins.iter().all(|b| b.errors == 0 && b.rate == 0.0));
    assert!(pos_rates.iter().all(|g| g.errors == 0 && g.rate == 0.0));

    pass("metric-fixtures", started);
}

// -------------------------------------------------------------------------
// Criterion: determinism. Two runs with identical seed and configuration
// produce byte-identical checkpoints, parses, and reports.
// -------------------------------------------------------------------------
#[test]
fn determinism() {
    let started = Instant::now();
    let records = generate_corpus(20, &mut ChaCha20Rng::seed_from_u64(700));
    let dev = generate_corpus(6, &mut ChaCha20Rng::seed_from_u64(701));

    let run = || -> (Vec<u8>, Vec<u8>, String) {
        let (words, pos, rels) = build_vocabs(&records);
        let mut model = Model::new(tiny_hyper(EncoderKind::TreeLstm), words, pos, rels, 55).unwrap();
        let (corpus, freq, _) = prepare_training(&model, &records, None);
        let opts = TrainOptions::default();
        let mut rng = ChaCha20Rng::seed_from_u64(56);
        for _ in 0..2 {
            train_epoch(&mut model, &corpus, &freq, &opts, &mut rng).unwrap();
        }
        let mut checkpoint = Vec::new();
        model.store.write_checkpoint(&mut checkpoint).unwrap();

        let trees: Vec<_> = dev
            .iter()
            .map(|r| parse_record(&model, r, None).unwrap())
            .collect();
        let mut parsed = Vec::new();
        efparse::conll::write_conll(&mut parsed, &dev, Some(&trees)).unwrap();

        let report = attachment_scores(
            &dev,
            &trees,
            &PunctuationPolicy::default(),
            &PosGroupTable::default(),
            5,
        )
        .unwrap();
        let report_json = serde_json::to_string(&report).unwrap();
        (checkpoint, parsed, report_json)
    };

    let (c1, p1, r1) = run();
    let (c2, p2, r2) = run();
    assert_eq!(c1, c2, "checkpoints differ");
    assert_eq!(p1, p2, "parses differ");
    assert_eq!(r1, r2, "reports differ");
    pass("determinism", started);
}
