//! The full parsing model: hyperparameters, vocabularies, and every
//! parameter group, with save/load to an `EFTP1` checkpoint plus a JSON
//! sidecar carrying the vocabularies and architecture.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bilstm::BiLstm;
use crate::embed::{DistanceBucketer, EmbeddingTable, Embeddings};
use crate::params::{ParamError, ParameterStore};
use crate::parser::Scorer;
use crate::subtree::{EncoderKind, SubtreeEncoder};
use crate::vocab::{Vocab, NO_REL_SYMBOL};

pub const META_FORMAT: &str = "efparse-meta-v1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("meta file {path}: {source}")]
    Meta {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("meta file {0} has format `{1}`, expected `{META_FORMAT}`")]
    MetaFormat(PathBuf, String),
    #[error("checkpoint/config mismatch for `{name}`: checkpoint has {got:?}, config wants {expected:?}")]
    ShapeMismatch {
        name: String,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("checkpoint is missing parameter `{0}`")]
    MissingParam(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture and feature dimensions. The paper states none of these, so
/// they default to small desk-scale values and stay configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub word_dim: usize,
    pub pos_dim: usize,
    pub dist_dim: usize,
    pub rel_dim: usize,
    pub distance_cap: usize,
    pub bilstm_hidden: usize,
    pub tree_dim: usize,
    pub scorer_hidden: usize,
    /// Pending-list context entries on each side of the candidate pair.
    pub window: usize,
    pub encoder: EncoderKind,
    pub labeled: bool,
    /// Width of externally injected per-token context vectors; 0 disables.
    pub external_dim: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            word_dim: 100,
            pos_dim: 25,
            dist_dim: 25,
            rel_dim: 25,
            distance_cap: 10,
            bilstm_hidden: 128,
            tree_dim: 128,
            scorer_hidden: 256,
            window: 2,
            encoder: EncoderKind::TreeLstm,
            labeled: true,
            external_dim: 0,
        }
    }
}

impl HyperParams {
    /// Width of the contextual vectors feeding the composers.
    pub fn x_dim(&self) -> usize {
        2 * self.bilstm_hidden
    }

    /// Width of a pending representation.
    pub fn tau_dim(&self) -> usize {
        match self.encoder {
            EncoderKind::None => self.x_dim(),
            _ => self.tree_dim,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.word_dim + self.pos_dim + self.external_dim
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format: String,
    hyper: HyperParams,
    words: Vocab,
    pos: Vocab,
    rels: Vocab,
}

#[derive(Debug)]
pub struct Model {
    pub hyper: HyperParams,
    pub words: Vocab,
    pub pos: Vocab,
    pub rels: Vocab,
    pub store: ParameterStore,
    pub embeds: Embeddings,
    pub bilstm: BiLstm,
    pub encoder: SubtreeEncoder,
    pub scorer: Scorer,
    /// Relation id used for every arc in unlabeled mode.
    pub no_rel: usize,
}

impl Model {
    /// Initialize all parameters from the seed. Embedding tables start
    /// uniform in [-0.01, 0.01]; weight matrices are Xavier-uniform.
    pub fn new(
        hyper: HyperParams,
        words: Vocab,
        pos: Vocab,
        mut rels: Vocab,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let no_rel = rels.intern(NO_REL_SYMBOL);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();

        let bucketer = DistanceBucketer::new(hyper.distance_cap);
        let word = EmbeddingTable::register(
            &mut store,
            "embed.word",
            words.len(),
            hyper.word_dim,
            0.01,
            &mut rng,
        )?;
        let pos_table = EmbeddingTable::register(
            &mut store,
            "embed.pos",
            pos.len(),
            hyper.pos_dim,
            0.01,
            &mut rng,
        )?;
        let dist = EmbeddingTable::register(
            &mut store,
            "embed.dist",
            bucketer.rows(),
            hyper.dist_dim,
            0.01,
            &mut rng,
        )?;
        let rel = EmbeddingTable::register(
            &mut store,
            "embed.rel",
            rels.len(),
            hyper.rel_dim,
            0.01,
            &mut rng,
        )?;
        let embeds = Embeddings {
            word,
            pos: pos_table,
            dist,
            rel,
            bucketer,
        };

        let bilstm = BiLstm::register(
            &mut store,
            "bilstm",
            hyper.embed_dim(),
            hyper.bilstm_hidden,
            &mut rng,
        )?;
        let encoder = SubtreeEncoder::register(
            &mut store,
            hyper.encoder,
            hyper.x_dim(),
            hyper.tree_dim,
            hyper.dist_dim,
            hyper.rel_dim,
            &mut rng,
        )?;
        let rel_slots = if hyper.labeled { rels.len() } else { 1 };
        let scorer = Scorer::register(
            &mut store,
            hyper.tau_dim(),
            hyper.scorer_hidden,
            hyper.window,
            rel_slots,
            &mut rng,
        )?;

        Ok(Model {
            hyper,
            words,
            pos,
            rels,
            store,
            embeds,
            bilstm,
            encoder,
            scorer,
            no_rel,
        })
    }

    fn assemble(
        hyper: HyperParams,
        words: Vocab,
        pos: Vocab,
        rels: Vocab,
        store: ParameterStore,
    ) -> Result<Self, ModelError> {
        let bucketer = DistanceBucketer::new(hyper.distance_cap);
        let attach = |name: &str, rows: usize, dim: usize| -> Result<EmbeddingTable, ModelError> {
            let table = store
                .get(name)
                .ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
            if table.shape() != (rows, dim) {
                return Err(ModelError::ShapeMismatch {
                    name: name.to_string(),
                    got: table.shape(),
                    expected: (rows, dim),
                });
            }
            Ok(EmbeddingTable {
                name: name.to_string(),
                rows,
                dim,
                trainable: true,
            })
        };
        let embeds = Embeddings {
            word: attach("embed.word", words.len(), hyper.word_dim)?,
            pos: attach("embed.pos", pos.len(), hyper.pos_dim)?,
            dist: attach("embed.dist", bucketer.rows(), hyper.dist_dim)?,
            rel: attach("embed.rel", rels.len(), hyper.rel_dim)?,
            bucketer,
        };
        // spot-check one core matrix per component so config/checkpoint
        // mismatches surface with both dims named
        let check = |name: &str, expected: (usize, usize)| -> Result<(), ModelError> {
            let t = store
                .get(name)
                .ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
            if t.shape() != expected {
                return Err(ModelError::ShapeMismatch {
                    name: name.to_string(),
                    got: t.shape(),
                    expected,
                });
            }
            Ok(())
        };
        check("bilstm.fwd.w_i", (hyper.bilstm_hidden, hyper.embed_dim()))?;
        let rel_slots = if hyper.labeled { rels.len() } else { 1 };
        check(
            "scorer.w1",
            (
                hyper.scorer_hidden,
                (2 * hyper.window + 2) * hyper.tau_dim(),
            ),
        )?;
        match hyper.encoder {
            EncoderKind::TreeLstm => check("tree.w_i", (hyper.tree_dim, hyper.x_dim()))?,
            EncoderKind::Rcnn => {
                check("rcnn.w", (hyper.tree_dim, hyper.x_dim() + hyper.tree_dim))?
            }
            EncoderKind::None => {}
        }

        let bilstm = BiLstm::attached("bilstm", hyper.embed_dim(), hyper.bilstm_hidden);
        let encoder = SubtreeEncoder::attached(
            hyper.encoder,
            hyper.x_dim(),
            hyper.tree_dim,
            hyper.dist_dim,
            hyper.rel_dim,
        );
        let scorer = Scorer::attached(
            hyper.tau_dim(),
            hyper.scorer_hidden,
            hyper.window,
            rel_slots,
        );
        let no_rel = rels
            .id(NO_REL_SYMBOL)
            .ok_or_else(|| ModelError::MissingParam(NO_REL_SYMBOL.to_string()))?;
        Ok(Model {
            hyper,
            words,
            pos,
            rels,
            store,
            embeds,
            bilstm,
            encoder,
            scorer,
            no_rel,
        })
    }

    pub fn meta_path(checkpoint: &Path) -> PathBuf {
        let mut name = checkpoint.file_name().unwrap_or_default().to_os_string();
        name.push(".meta.json");
        checkpoint.with_file_name(name)
    }

    pub fn save(&self, checkpoint: &Path) -> Result<(), ModelError> {
        self.store.save(checkpoint)?;
        let meta = Meta {
            format: META_FORMAT.to_string(),
            hyper: self.hyper.clone(),
            words: self.words.clone(),
            pos: self.pos.clone(),
            rels: self.rels.clone(),
        };
        let path = Self::meta_path(checkpoint);
        let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
        std::fs::write(&path, json)?;
        Ok(())
    }

    pub fn load(checkpoint: &Path) -> Result<Self, ModelError> {
        let store = ParameterStore::load(checkpoint)?;
        let meta_path = Self::meta_path(checkpoint);
        let raw = std::fs::read_to_string(&meta_path)?;
        let meta: Meta = serde_json::from_str(&raw).map_err(|source| ModelError::Meta {
            path: meta_path.clone(),
            source,
        })?;
        if meta.format != META_FORMAT {
            return Err(ModelError::MetaFormat(meta_path, meta.format));
        }
        Self::assemble(meta.hyper, meta.words, meta.pos, meta.rels, store)
    }

    /// Map a sentence onto (word ids, pos ids) with OOV falling back to UNK.
    pub fn sentence_ids(&self, record: &crate::conll::SentenceRecord) -> (Vec<usize>, Vec<usize>) {
        let words = record
            .tokens
            .iter()
            .map(|t| self.words.id_or_unk(&t.form))
            .collect();
        let pos = record
            .tokens
            .iter()
            .map(|t| self.pos.id_or_unk(&t.pos))
            .collect();
        (words, pos)
    }

    /// First relation id that names an actual treebank label (everything
    /// below is a reserved symbol).
    pub fn first_real_rel(&self) -> usize {
        self.no_rel + 1
    }
}

/// Build vocabularies from training records, in first-occurrence order.
pub fn build_vocabs(records: &[crate::conll::SentenceRecord]) -> (Vocab, Vocab, Vocab) {
    let mut words = Vocab::new();
    let mut pos = Vocab::new();
    let mut rels = Vocab::new();
    rels.intern(NO_REL_SYMBOL);
    for rec in records {
        for token in &rec.tokens {
            words.intern(&token.form);
            pos.intern(&token.pos);
            if let Some(rel) = &token.rel {
                rels.intern(rel);
            }
        }
    }
    (words, pos, rels)
}
