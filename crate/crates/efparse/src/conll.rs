//! CoNLL-X/U treebank reading and writing.
//!
//! Sentences are blank-line separated blocks of 10 tab-separated columns.
//! Multiword ranges (`1-2`) and empty nodes (`3.1`) are skipped; comment
//! lines are preserved verbatim so a read/write cycle reproduces them.

use std::io::{self, BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConllError {
    #[error("line {line}: expected 10 columns, found {found}")]
    ColumnCount { line: usize, found: usize },
    #[error("line {line}: bad token id `{id}`")]
    BadId { line: usize, id: String },
    #[error("line {line}: bad head `{head}`")]
    BadHead { line: usize, head: String },
    #[error("sentence {sentence} (`{excerpt}`): head {head} out of range for {len} tokens")]
    HeadRange {
        sentence: usize,
        excerpt: String,
        head: usize,
        len: usize,
    },
    #[error("line {line}: token is its own head")]
    SelfHead { line: usize },
    #[error("sentence {sentence} (`{excerpt}`): gold heads contain a cycle")]
    Cycle { sentence: usize, excerpt: String },
    #[error("sentence {sentence} (`{excerpt}`): {roots} tokens attach to the root, expected exactly 1")]
    RootCount {
        sentence: usize,
        excerpt: String,
        roots: usize,
    },
    #[error("prediction count {preds} does not match sentence count {sentences}")]
    SentenceArity { preds: usize, sentences: usize },
    #[error("sentence {sentence}: prediction has {preds} arcs for {tokens} tokens")]
    TokenArity {
        sentence: usize,
        preds: usize,
        tokens: usize,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    /// 1-based position in the sentence.
    pub index: usize,
    pub form: String,
    /// Fine POS tag (column 5) when present, else the coarse tag (column 4).
    pub pos: String,
    /// Gold head: 0 means the arc attaches to the root. `None` if unannotated.
    pub head: Option<usize>,
    pub rel: Option<String>,
    /// Raw columns, kept for lossless writing.
    columns: [String; 10],
}

impl Token {
    /// Build a token from scratch (used by generators and tests).
    pub fn new(index: usize, form: &str, pos: &str, head: usize, rel: &str) -> Self {
        let columns = [
            index.to_string(),
            form.to_string(),
            "_".to_string(),
            pos.to_string(),
            pos.to_string(),
            "_".to_string(),
            head.to_string(),
            rel.to_string(),
            "_".to_string(),
            "_".to_string(),
        ];
        Token {
            index,
            form: form.to_string(),
            pos: pos.to_string(),
            head: Some(head),
            rel: Some(rel.to_string()),
            columns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SentenceRecord {
    pub tokens: Vec<Token>,
    /// Comment lines (starting with `#`) above the sentence, verbatim.
    pub comments: Vec<String>,
}

impl SentenceRecord {
    pub fn from_tokens(tokens: Vec<Token>) -> Self {
        SentenceRecord {
            tokens,
            comments: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Gold heads when the sentence is fully annotated.
    pub fn gold_heads(&self) -> Option<Vec<usize>> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    fn excerpt(&self) -> String {
        let mut s = String::new();
        for t in self.tokens.iter().take(4) {
            if !s.is_empty() {
                s.push(' ');
            }
            s.push_str(&t.form);
        }
        if self.tokens.len() > 4 {
            s.push_str(" ...");
        }
        s
    }
}

/// One predicted arc per token: `(head, relation)`, heads 1-based with 0 for
/// the root.
pub type PredictedTree = Vec<(usize, String)>;

pub fn read_conll<R: BufRead>(reader: R) -> Result<Vec<SentenceRecord>, ConllError> {
    let mut records = Vec::new();
    let mut current = SentenceRecord::default();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            if !current.tokens.is_empty() || !current.comments.is_empty() {
                finish_sentence(&mut records, std::mem::take(&mut current))?;
            }
            continue;
        }
        if trimmed.starts_with('#') {
            current.comments.push(trimmed.to_string());
            continue;
        }
        let cols: Vec<&str> = if trimmed.contains('\t') {
            trimmed.split('\t').collect()
        } else {
            trimmed.split_whitespace().collect()
        };
        if cols.len() != 10 {
            return Err(ConllError::ColumnCount {
                line: line_no,
                found: cols.len(),
            });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue; // multiword range or empty node
        }
        let index: usize = id.parse().map_err(|_| ConllError::BadId {
            line: line_no,
            id: id.to_string(),
        })?;
        let head = match cols[6] {
            "_" => None,
            h => Some(h.parse::<usize>().map_err(|_| ConllError::BadHead {
                line: line_no,
                head: h.to_string(),
            })?),
        };
        if head == Some(index) {
            return Err(ConllError::SelfHead { line: line_no });
        }
        let rel = match cols[7] {
            "_" => None,
            r => Some(r.to_string()),
        };
        let pos = if cols[4] != "_" { cols[4] } else { cols[3] };
        let mut columns: [String; 10] = Default::default();
        for (slot, col) in columns.iter_mut().zip(&cols) {
            *slot = col.to_string();
        }
        current.tokens.push(Token {
            index,
            form: cols[1].to_string(),
            pos: pos.to_string(),
            head,
            rel,
            columns,
        });
    }
    if !current.tokens.is_empty() || !current.comments.is_empty() {
        finish_sentence(&mut records, current)?;
    }
    Ok(records)
}

fn finish_sentence(
    records: &mut Vec<SentenceRecord>,
    sentence: SentenceRecord,
) -> Result<(), ConllError> {
    if sentence.tokens.is_empty() {
        // trailing comment block with no tokens
        return Ok(());
    }
    let ordinal = records.len() + 1;
    if let Some(heads) = sentence.gold_heads() {
        validate_tree(&heads).map_err(|kind| match kind {
            TreeDefect::Cycle => ConllError::Cycle {
                sentence: ordinal,
                excerpt: sentence.excerpt(),
            },
            TreeDefect::RootCount(roots) => ConllError::RootCount {
                sentence: ordinal,
                excerpt: sentence.excerpt(),
                roots,
            },
            TreeDefect::HeadRange(head) => ConllError::HeadRange {
                sentence: ordinal,
                excerpt: sentence.excerpt(),
                head,
                len: sentence.tokens.len(),
            },
        })?;
    }
    records.push(sentence);
    Ok(())
}

enum TreeDefect {
    Cycle,
    RootCount(usize),
    HeadRange(usize),
}

/// Check that `heads` (over 1-based tokens, 0 = root) forms a single-rooted
/// tree.
fn validate_tree(heads: &[usize]) -> Result<(), TreeDefect> {
    let n = heads.len();
    for &h in heads {
        if h > n {
            return Err(TreeDefect::HeadRange(h));
        }
    }
    let roots = heads.iter().filter(|&&h| h == 0).count();
    if roots != 1 {
        return Err(TreeDefect::RootCount(roots));
    }
    for start in 0..n {
        let mut seen = vec![false; n + 1];
        let mut at = start + 1;
        while at != 0 {
            if seen[at] {
                return Err(TreeDefect::Cycle);
            }
            seen[at] = true;
            at = heads[at - 1];
        }
    }
    Ok(())
}

/// Well-formedness check used on parser output: every token has one head,
/// exactly one attaches to the root, no cycles.
pub fn is_well_formed_tree(heads: &[usize]) -> bool {
    validate_tree(heads).is_ok()
}

/// A tree is projective when no two arcs cross, drawing each arc over the
/// span between head and modifier (the root arc starts at position 0).
pub fn is_projective(heads: &[usize]) -> bool {
    let arcs: Vec<(usize, usize)> = heads
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let m = i + 1;
            (h.min(m), h.max(m))
        })
        .collect();
    for (a, &(lo1, hi1)) in arcs.iter().enumerate() {
        for &(lo2, hi2) in arcs.iter().skip(a + 1) {
            let crosses = (lo1 < lo2 && lo2 < hi1 && hi1 < hi2)
                || (lo2 < lo1 && lo1 < hi2 && hi2 < hi1);
            if crosses {
                return false;
            }
        }
    }
    true
}

/// Write records as read, optionally substituting predicted heads/relations.
pub fn write_conll<W: Write>(
    mut w: W,
    records: &[SentenceRecord],
    predictions: Option<&[PredictedTree]>,
) -> Result<(), ConllError> {
    if let Some(preds) = predictions {
        if preds.len() != records.len() {
            return Err(ConllError::SentenceArity {
                preds: preds.len(),
                sentences: records.len(),
            });
        }
        for (i, (rec, pred)) in records.iter().zip(preds).enumerate() {
            if rec.tokens.len() != pred.len() {
                return Err(ConllError::TokenArity {
                    sentence: i + 1,
                    preds: pred.len(),
                    tokens: rec.tokens.len(),
                });
            }
        }
    }
    for (i, rec) in records.iter().enumerate() {
        for comment in &rec.comments {
            writeln!(w, "{comment}")?;
        }
        for (t, token) in rec.tokens.iter().enumerate() {
            let mut cols = token.columns.clone();
            if let Some(preds) = predictions {
                let (head, rel) = &preds[i][t];
                cols[6] = head.to_string();
                cols[7] = rel.clone();
            }
            writeln!(w, "{}", cols.join("\t"))?;
        }
        writeln!(w)?;
    }
    Ok(())
}
