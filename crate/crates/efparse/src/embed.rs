//! Embedding tables: word, POS, signed-distance, and relation lookups, plus
//! loading of pre-trained word vectors and externally computed per-token
//! context vectors.

use std::io::BufRead;

use thiserror::Error;

use crate::conll::SentenceRecord;
use crate::params::ParameterStore;
use crate::tape::{AutodiffError, NodeId, Tape};
use crate::tensor::Tensor;
use crate::vocab::Vocab;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("{table}: id {id} out of range for {rows} rows")]
    IdOutOfRange {
        table: String,
        id: usize,
        rows: usize,
    },
    #[error("pretrained vectors line {line}: expected {expected} values, found {found}")]
    DimMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("pretrained vectors line {line}: unparseable value `{value}`")]
    BadValue { line: usize, value: String },
    #[error("external context: sentence {sentence} has {tokens} tokens but {lines} vector lines")]
    ContextTokenMismatch {
        sentence: usize,
        tokens: usize,
        lines: usize,
    },
    #[error("external context: found {blocks} blocks for {sentences} sentences")]
    ContextSentenceMismatch { blocks: usize, sentences: usize },
    #[error("external context: sentence {sentence} mixes vector widths {a} and {b}")]
    ContextWidthMismatch { sentence: usize, a: usize, b: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A `(rows x dim)` lookup table stored in the parameter store under `name`.
/// Frozen tables are looked up as constants, so no gradient reaches them.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub name: String,
    pub rows: usize,
    pub dim: usize,
    pub trainable: bool,
}

impl EmbeddingTable {
    /// Register a new table initialized uniformly in `[-scale, scale]`.
    pub fn register(
        store: &mut ParameterStore,
        name: &str,
        rows: usize,
        dim: usize,
        scale: f64,
        rng: &mut impl rand::Rng,
    ) -> Result<Self, crate::params::ParamError> {
        store.insert_uniform(name, rows, dim, scale, rng)?;
        Ok(EmbeddingTable {
            name: name.to_string(),
            rows,
            dim,
            trainable: true,
        })
    }

    /// Describe a table already present in the store.
    pub fn attached(store: &ParameterStore, name: &str) -> Option<Self> {
        store.get(name).map(|t| EmbeddingTable {
            name: name.to_string(),
            rows: t.rows(),
            dim: t.cols(),
            trainable: true,
        })
    }

    /// Row `id` as a column vector node.
    pub fn lookup(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        id: usize,
    ) -> Result<NodeId, EmbedError> {
        if id >= self.rows {
            return Err(EmbedError::IdOutOfRange {
                table: self.name.clone(),
                id,
                rows: self.rows,
            });
        }
        if self.trainable {
            let table = tape.param(store, &self.name)?;
            Ok(tape.select_row(table, id)?)
        } else {
            let row = store
                .get(&self.name)
                .expect("attached table")
                .row(id)
                .to_vec();
            Ok(tape.constant(Tensor::col(&row)))
        }
    }
}

/// Signed relative distance, clipped to `±cap`, as a dense bucket id.
/// `+d` and `-d` land in distinct buckets; the table has `2*cap + 1` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DistanceBucketer {
    pub cap: usize,
}

impl DistanceBucketer {
    pub fn new(cap: usize) -> Self {
        DistanceBucketer { cap: cap.max(1) }
    }

    pub fn rows(&self) -> usize {
        2 * self.cap + 1
    }

    /// Bucket for `index(head) - index(modifier)`.
    pub fn bucket(&self, head_index: usize, modifier_index: usize) -> usize {
        let d = head_index as i64 - modifier_index as i64;
        let cap = self.cap as i64;
        (d.clamp(-cap, cap) + cap) as usize
    }
}

/// All lookup tables the encoders touch.
#[derive(Debug, Clone)]
pub struct Embeddings {
    pub word: EmbeddingTable,
    pub pos: EmbeddingTable,
    pub dist: EmbeddingTable,
    pub rel: EmbeddingTable,
    pub bucketer: DistanceBucketer,
}

impl Embeddings {
    /// Word embedding concatenated with POS embedding.
    pub fn embed_token(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        word_id: usize,
        pos_id: usize,
    ) -> Result<NodeId, EmbedError> {
        let w = self.word.lookup(tape, store, word_id)?;
        let p = self.pos.lookup(tape, store, pos_id)?;
        Ok(tape.concat_rows(&[w, p])?)
    }

    /// Distance embedding for a head/modifier pair of original positions.
    pub fn embed_distance(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        head_index: usize,
        modifier_index: usize,
    ) -> Result<NodeId, EmbedError> {
        let bucket = self.bucketer.bucket(head_index, modifier_index);
        self.dist.lookup(tape, store, bucket)
    }

    pub fn embed_relation(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        rel_id: usize,
    ) -> Result<NodeId, EmbedError> {
        self.rel.lookup(tape, store, rel_id)
    }
}

/// Coverage report from [`load_pretrained`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coverage {
    pub covered: usize,
    pub vocab_words: usize,
}

impl Coverage {
    pub fn fraction(&self) -> f64 {
        if self.vocab_words == 0 {
            0.0
        } else {
            self.covered as f64 / self.vocab_words as f64
        }
    }
}

/// Overwrite table rows for in-vocabulary words from a text stream of
/// `word v1 ... vdim` lines. Out-of-vocabulary words are ignored; vocabulary
/// words missing from the file keep their random initialization.
pub fn load_pretrained<R: BufRead>(
    reader: R,
    vocab: &Vocab,
    store: &mut ParameterStore,
    table: &EmbeddingTable,
) -> Result<Coverage, EmbedError> {
    let mut covered = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("non-empty line");
        let values: Vec<&str> = parts.collect();
        if values.len() != table.dim {
            return Err(EmbedError::DimMismatch {
                line: line_no,
                expected: table.dim,
                found: values.len(),
            });
        }
        let Some(id) = vocab.id(word) else {
            continue;
        };
        let mut row = Vec::with_capacity(table.dim);
        for v in values {
            row.push(v.parse::<f64>().map_err(|_| EmbedError::BadValue {
                line: line_no,
                value: v.to_string(),
            })?);
        }
        store
            .get_mut(&table.name)
            .expect("table registered")
            .row_mut(id)
            .copy_from_slice(&row);
        if !vocab.is_special(id) {
            covered += 1;
        }
    }
    Ok(Coverage {
        covered,
        vocab_words: vocab.non_special_count(),
    })
}

/// Parse externally computed per-token vectors: one blank-line separated
/// block per sentence, one line of space-separated reals per token.
/// Width-zero vectors mean the hook is disabled and `None` is returned.
pub fn load_external_context<R: BufRead>(
    reader: R,
    sentences: &[SentenceRecord],
) -> Result<Option<Vec<Vec<Vec<f64>>>>, EmbedError> {
    let mut blocks: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut current: Vec<Vec<f64>> = Vec::new();
    let mut saw_line_in_block = false;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            if saw_line_in_block {
                blocks.push(std::mem::take(&mut current));
                saw_line_in_block = false;
            }
            continue;
        }
        saw_line_in_block = true;
        let mut vec = Vec::new();
        for v in line.split_whitespace() {
            vec.push(v.parse::<f64>().map_err(|_| EmbedError::BadValue {
                line: line_no,
                value: v.to_string(),
            })?);
        }
        current.push(vec);
    }
    if saw_line_in_block {
        blocks.push(current);
    }

    if blocks.is_empty() {
        return Ok(None); // nothing supplied: hook disabled
    }
    if blocks.len() != sentences.len() {
        return Err(EmbedError::ContextSentenceMismatch {
            blocks: blocks.len(),
            sentences: sentences.len(),
        });
    }
    let mut width: Option<usize> = None;
    for (i, (block, sentence)) in blocks.iter().zip(sentences).enumerate() {
        if block.len() != sentence.len() {
            return Err(EmbedError::ContextTokenMismatch {
                sentence: i + 1,
                tokens: sentence.len(),
                lines: block.len(),
            });
        }
        for v in block {
            match width {
                None => width = Some(v.len()),
                Some(w) if w != v.len() => {
                    return Err(EmbedError::ContextWidthMismatch {
                        sentence: i + 1,
                        a: w,
                        b: v.len(),
                    })
                }
                _ => {}
            }
        }
    }
    match width {
        Some(0) | None => Ok(None), // degenerate width: hook disabled
        Some(_) => Ok(Some(blocks)),
    }
}
