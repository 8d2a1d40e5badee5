//! Seeded synthetic treebanks.
//!
//! A projective grammar over a generated lexicon, built so that the hard
//! attachment decisions depend on lexical material *inside* already-built
//! phrases: prepositions themselves are uninformative, and a prepositional
//! phrase attaches high (to the verb) or low (to a noun) according to a
//! latent class match between its embedded object noun and the candidate
//! head. Subjects agree in number with the verb across intervening
//! distractor nouns, and clauses coordinate. Also provides uniformly random
//! projective trees for state-machine tests.

use rand::Rng;

use crate::conll::{SentenceRecord, Token};

/// Random projective dependency tree over `n` tokens as a head vector
/// (1-based heads, 0 = root). Built by random bracketing: exactly the trees
/// an adjacent-pair attachment parser can derive arise this way.
pub fn random_projective_tree(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    assert!(n >= 1);
    let mut heads = vec![0usize; n];
    let root = build_span(0, n, rng, &mut heads);
    heads[root - 1] = 0;
    heads
}

fn build_span(lo: usize, hi: usize, rng: &mut impl Rng, heads: &mut [usize]) -> usize {
    if hi - lo == 1 {
        return lo + 1;
    }
    let split = rng.gen_range(lo + 1..hi);
    let left = build_span(lo, split, rng, heads);
    let right = build_span(split, hi, rng, heads);
    if rng.gen_bool(0.5) {
        heads[right - 1] = left;
        left
    } else {
        heads[left - 1] = right;
        right
    }
}

const SYLLABLES: [&str; 16] = [
    "ba", "re", "mi", "to", "lu", "ka", "pe", "so", "da", "ni", "vo", "gu", "fa", "ze", "ri", "mo",
];

fn stem(stem_id: usize) -> String {
    let a = SYLLABLES[stem_id % SYLLABLES.len()];
    let b = SYLLABLES[(stem_id / SYLLABLES.len() * 7 + 3) % SYLLABLES.len()];
    format!("{a}{b}")
}

/// Generated lexicon. Nouns and verbs carry a latent binary class that
/// drives attachment preferences.
pub struct Lexicon {
    pub nouns: usize,
    pub verbs: usize,
    pub adjectives: usize,
    pub adverbs: usize,
    pub preps: Vec<&'static str>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon {
            nouns: 120,
            verbs: 80,
            adjectives: 30,
            adverbs: 12,
            preps: vec!["xo", "na"],
        }
    }
}

impl Lexicon {
    fn noun(&self, id: usize, plural: bool) -> (String, &'static str) {
        let base = stem(id);
        if plural {
            (format!("{base}kas"), "NNS")
        } else {
            (format!("{base}ka"), "NN")
        }
    }

    fn verb(&self, id: usize, plural_subject: bool) -> (String, &'static str) {
        let base = stem(id + 150);
        if plural_subject {
            (format!("{base}un"), "VBP")
        } else {
            (format!("{base}us"), "VBZ")
        }
    }

    fn adjective(&self, id: usize) -> String {
        format!("{}iv", stem(id + 300))
    }

    fn adverb(&self, id: usize) -> String {
        format!("{}li", stem(id + 400))
    }

    /// Latent class of a noun.
    fn noun_class(&self, id: usize) -> bool {
        (id / 3 + id).is_multiple_of(2)
    }

    /// Latent class of a verb.
    fn verb_class(&self, id: usize) -> bool {
        !(id / 5 + id).is_multiple_of(2)
    }
}

struct TokSpec {
    form: String,
    pos: &'static str,
    head: usize, // 0-based position of the head; ROOT_SLOT = clause root
    rel: &'static str,
}

const ROOT_SLOT: usize = usize::MAX;

struct Generator<'l, R: Rng> {
    lex: &'l Lexicon,
    rng: R,
}

impl<'l, R: Rng> Generator<'l, R> {
    /// Noun phrase; returns `(head position, noun id)`. `fat` forces a
    /// determiner and at least one adjective so the noun sits a few tokens
    /// from the phrase edge.
    fn np(&mut self, toks: &mut Vec<TokSpec>, plural: bool, fat: bool) -> (usize, usize) {
        let phrase_start = toks.len();
        if fat || self.rng.gen_bool(0.8) {
            let det = ["the", "a", "som"][self.rng.gen_range(0..3)];
            toks.push(TokSpec {
                form: det.to_string(),
                pos: "DT",
                head: 0,
                rel: "det",
            });
        }
        let n_adj = if fat {
            self.rng.gen_range(1..3)
        } else {
            match self.rng.gen_range(0..10) {
                0..=5 => 0,
                6..=8 => 1,
                _ => 2,
            }
        };
        for _ in 0..n_adj {
            let id = self.rng.gen_range(0..self.lex.adjectives);
            toks.push(TokSpec {
                form: self.lex.adjective(id),
                pos: "JJ",
                head: 0,
                rel: "amod",
            });
        }
        let noun_id = self.rng.gen_range(0..self.lex.nouns);
        let (form, pos) = self.lex.noun(noun_id, plural);
        let noun_at = toks.len();
        toks.push(TokSpec {
            form,
            pos,
            head: 0,
            rel: "",
        });
        for t in toks[phrase_start..noun_at].iter_mut() {
            t.head = noun_at;
        }
        (noun_at, noun_id)
    }

    /// Prepositional phrase under `head`. The preposition carries no
    /// information; the object noun phrase is fat so the noun sits 2-4
    /// tokens after the preposition. Returns the object noun's id.
    fn pp(&mut self, toks: &mut Vec<TokSpec>, head: usize) -> (usize, usize) {
        let prep_at = toks.len();
        let prep = self.lex.preps[self.rng.gen_range(0..self.lex.preps.len())];
        toks.push(TokSpec {
            form: prep.to_string(),
            pos: "IN",
            head,
            rel: "prep",
        });
        let plural = self.rng.gen_bool(0.5);
        let (obj, obj_id) = self.np(toks, plural, true);
        toks[obj].head = prep_at;
        toks[obj].rel = "pobj";
        (prep_at, obj_id)
    }

    /// A right-branching chain of `depth` nested phrases: each inner
    /// preposition attaches to the previous embedded noun. Returns the
    /// first preposition's position and the XOR of the embedded nouns'
    /// classes — a feature that accumulates one hop at a time up the chain
    /// and has no positional shortcut.
    fn pp_chain(&mut self, toks: &mut Vec<TokSpec>, depth: usize) -> (usize, bool) {
        let (first_prep, first_id) = self.pp(toks, ROOT_SLOT);
        let mut parity = self.lex.noun_class(first_id);
        let mut noun_at = toks
            .iter()
            .rposition(|t| t.rel == "pobj")
            .expect("just generated");
        for _ in 1..depth {
            let (_, inner_id) = self.pp(toks, noun_at);
            parity ^= self.lex.noun_class(inner_id);
            noun_at = toks
                .iter()
                .rposition(|t| t.rel == "pobj")
                .expect("just generated");
        }
        (first_prep, parity)
    }

    /// One clause; returns the position of its verb. The verb's number
    /// agrees with the subject head noun, with distractor nouns of the
    /// other number inserted between them where possible.
    fn clause(&mut self, toks: &mut Vec<TokSpec>) -> usize {
        let subject_plural = self.rng.gen_bool(0.5);
        let (subj, _) = self.np(toks, subject_plural, false);
        toks[subj].rel = "nsubj";

        // subject-attached distractor phrase: its noun prefers the
        // opposite number
        if self.rng.gen_bool(0.4) {
            let distractor_plural = if self.rng.gen_bool(0.75) {
                !subject_plural
            } else {
                subject_plural
            };
            let prep_at = toks.len();
            let prep = self.lex.preps[self.rng.gen_range(0..self.lex.preps.len())];
            toks.push(TokSpec {
                form: prep.to_string(),
                pos: "IN",
                head: subj,
                rel: "prep",
            });
            let (obj, _) = self.np(toks, distractor_plural, true);
            toks[obj].head = prep_at;
            toks[obj].rel = "pobj";
        }

        let verb_id = self.rng.gen_range(0..self.lex.verbs);
        let (vform, vpos) = self.lex.verb(verb_id, subject_plural);
        let verb_at = toks.len();
        toks.push(TokSpec {
            form: vform,
            pos: vpos,
            head: ROOT_SLOT,
            rel: "root",
        });
        toks[subj].head = verb_at;

        let object = if self.rng.gen_bool(0.75) {
            let plural = self.rng.gen_bool(0.5);
            let (obj, obj_id) = self.np(toks, plural, false);
            toks[obj].head = verb_at;
            toks[obj].rel = "dobj";
            Some((obj, obj_id))
        } else {
            None
        };

        // High/low attachment of a nested phrase chain: the inner chain is
        // right-branching (deterministic), but whether the whole chain
        // hangs off the verb or the object noun is decided by the class
        // parity accumulated over the chain's embedded nouns, matched
        // against the verb's class.
        if let Some((obj, _)) = object {
            if self.rng.gen_bool(0.85) {
                let depth = match self.rng.gen_range(0..100) {
                    0..=29 => 1,
                    30..=69 => 2,
                    _ => 3,
                };
                let (first_prep, parity) = self.pp_chain(toks, depth);
                let high = parity == self.lex.verb_class(verb_id);
                toks[first_prep].head = if high { verb_at } else { obj };
            }
        } else if self.rng.gen_bool(0.4) {
            let (first_prep, _) = self.pp_chain(toks, 1);
            toks[first_prep].head = verb_at;
        }

        if self.rng.gen_bool(0.3) {
            let id = self.rng.gen_range(0..self.lex.adverbs);
            toks.push(TokSpec {
                form: self.lex.adverb(id),
                pos: "RB",
                head: verb_at,
                rel: "advmod",
            });
        }
        verb_at
    }

    fn sentence(&mut self) -> SentenceRecord {
        let mut toks: Vec<TokSpec> = Vec::new();
        let root_verb = self.clause(&mut toks);

        // clause coordination: the second verb attaches under the first
        if self.rng.gen_bool(0.25) {
            toks.push(TokSpec {
                form: "et".to_string(),
                pos: "CC",
                head: root_verb,
                rel: "cc",
            });
            let second = self.clause(&mut toks);
            toks[second].head = root_verb;
            toks[second].rel = "conj";
        }

        toks.push(TokSpec {
            form: ".".to_string(),
            pos: ".",
            head: root_verb,
            rel: "punct",
        });

        let tokens = toks
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let head = if t.head == ROOT_SLOT { 0 } else { t.head + 1 };
                Token::new(i + 1, &t.form, t.pos, head, t.rel)
            })
            .collect();
        SentenceRecord::from_tokens(tokens)
    }
}

/// Generate a corpus of `n` sentences from the default grammar.
pub fn generate_corpus(n: usize, rng: &mut impl Rng) -> Vec<SentenceRecord> {
    let lex = Lexicon::default();
    let mut generator = Generator { lex: &lex, rng };
    (0..n).map(|_| generator.sentence()).collect()
}
