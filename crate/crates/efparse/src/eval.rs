//! Attachment metrics and error profiling.
//!
//! UAS counts tokens whose predicted head matches gold; LAS additionally
//! requires the relation to match. Tokens whose *gold* POS tag is in the
//! punctuation set are excluded from numerator and denominator alike, and
//! the same exclusion applies to the per-length-bin error rates.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conll::{PredictedTree, SentenceRecord};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold has {gold} sentences, predictions have {pred}")]
    SentenceCount { gold: usize, pred: usize },
    #[error("sentence {sentence}: gold has {gold} tokens, prediction has {pred}")]
    LengthMismatch {
        sentence: usize,
        gold: usize,
        pred: usize,
    },
    #[error("sentence {sentence}: gold heads are missing")]
    MissingGold { sentence: usize },
}

/// POS tags treated as punctuation. The paper only says punctuation is
/// ignored "as in previous work", so the concrete set stays configurable.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PunctuationPolicy {
    pub punct_pos: Vec<String>,
}

impl Default for PunctuationPolicy {
    fn default() -> Self {
        PunctuationPolicy {
            punct_pos: ["``", "''", ":", ",", "."]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

impl PunctuationPolicy {
    pub fn is_punct(&self, pos: &str) -> bool {
        self.punct_pos.iter().any(|p| p == pos)
    }
}

/// PTB-style mapping from POS tags onto six coarse groups. A trailing `*`
/// makes the pattern a prefix match; tags matching no rule are skipped.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PosGroupTable {
    pub rules: Vec<(String, String)>,
}

impl Default for PosGroupTable {
    fn default() -> Self {
        let rules = [
            ("NN*", "noun"),
            ("VB*", "verb"),
            ("PRP*", "pronoun"),
            ("WP*", "pronoun"),
            ("JJ*", "adjective"),
            ("RB*", "adverb"),
            ("CC", "conjunction"),
            ("IN", "conjunction"),
        ];
        PosGroupTable {
            rules: rules
                .iter()
                .map(|(p, g)| (p.to_string(), g.to_string()))
                .collect(),
        }
    }
}

impl PosGroupTable {
    pub fn group(&self, pos: &str) -> Option<&str> {
        for (pattern, group) in &self.rules {
            let hit = match pattern.strip_suffix('*') {
                Some(prefix) => pos.starts_with(prefix),
                None => pos == pattern,
            };
            if hit {
                return Some(group);
            }
        }
        None
    }

    /// Group names in first-appearance order.
    pub fn groups(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for (_, g) in &self.rules {
            if !out.iter().any(|x| x == g) {
                out.push(g);
            }
        }
        out
    }
}

/// One row of an error profile; `rate = errors / total` with denominators
/// kept so the rates are auditable.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BucketRate {
    pub kind: String,
    pub bucket: String,
    pub errors: usize,
    pub total: usize,
    pub rate: f64,
}

impl BucketRate {
    fn new(kind: &str, bucket: String, errors: usize, total: usize) -> Self {
        let rate = if total == 0 {
            0.0
        } else {
            errors as f64 / total as f64
        };
        BucketRate {
            kind: kind.to_string(),
            bucket,
            errors,
            total,
            rate,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub uas: f64,
    pub las: f64,
    pub counted_tokens: usize,
    pub excluded_tokens: usize,
    pub correct_heads: usize,
    pub correct_labeled: usize,
    pub length_bins: Vec<BucketRate>,
    pub pos_groups: Vec<BucketRate>,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "UAS      {:.4}  ({}/{})", self.uas, self.correct_heads, self.counted_tokens)?;
        writeln!(f, "LAS      {:.4}  ({}/{})", self.las, self.correct_labeled, self.counted_tokens)?;
        writeln!(f, "counted  {}", self.counted_tokens)?;
        write!(f, "excluded {}", self.excluded_tokens)
    }
}

/// Compute UAS/LAS plus error profiles over aligned gold/predicted corpora.
pub fn attachment_scores(
    gold: &[SentenceRecord],
    pred: &[PredictedTree],
    policy: &PunctuationPolicy,
    groups: &PosGroupTable,
    bin_width: usize,
) -> Result<EvalReport, EvalError> {
    check_aligned(gold, pred)?;

    let mut counted = 0usize;
    let mut excluded = 0usize;
    let mut correct_heads = 0usize;
    let mut correct_labeled = 0usize;

    for (rec, tree) in gold.iter().zip(pred) {
        for (token, (phead, prel)) in rec.tokens.iter().zip(tree) {
            if policy.is_punct(&token.pos) {
                excluded += 1;
                continue;
            }
            counted += 1;
            let ghead = token.head.expect("checked by check_aligned");
            if ghead == *phead {
                correct_heads += 1;
                // unannotated gold relations cannot penalize the label match
                let label_ok = token.rel.as_deref().is_none_or(|r| r == prel);
                if label_ok {
                    correct_labeled += 1;
                }
            }
        }
    }

    let (length_bins, pos_groups) = error_profile(gold, pred, policy, groups, bin_width)?;
    let ratio = |num: usize| {
        if counted == 0 {
            0.0
        } else {
            num as f64 / counted as f64
        }
    };
    Ok(EvalReport {
        uas: ratio(correct_heads),
        las: ratio(correct_labeled),
        counted_tokens: counted,
        excluded_tokens: excluded,
        correct_heads,
        correct_labeled,
        length_bins,
        pos_groups,
    })
}

/// Unlabeled error rates split by sentence-length bin and by POS group.
///
/// Sentences are binned by raw token count into bins of `bin_width` starting
/// at 1 (1-5, 6-10, ... for width 5). Errors and denominators count
/// non-punctuation tokens; tags outside the group table are skipped from the
/// POS profile without affecting the group denominators.
pub fn error_profile(
    gold: &[SentenceRecord],
    pred: &[PredictedTree],
    policy: &PunctuationPolicy,
    groups: &PosGroupTable,
    bin_width: usize,
) -> Result<(Vec<BucketRate>, Vec<BucketRate>), EvalError> {
    check_aligned(gold, pred)?;
    let bin_width = bin_width.max(1);

    let max_len = gold.iter().map(|r| r.len()).max().unwrap_or(0);
    let n_bins = if max_len == 0 {
        0
    } else {
        (max_len - 1) / bin_width + 1
    };
    let mut bin_errors = vec![0usize; n_bins];
    let mut bin_totals = vec![0usize; n_bins];

    let group_names = groups.groups();
    let mut group_errors = vec![0usize; group_names.len()];
    let mut group_totals = vec![0usize; group_names.len()];

    for (rec, tree) in gold.iter().zip(pred) {
        let bin = if rec.is_empty() {
            None
        } else {
            Some((rec.len() - 1) / bin_width)
        };
        for (token, (phead, _)) in rec.tokens.iter().zip(tree) {
            let ghead = token.head.expect("checked by check_aligned");
            let wrong = ghead != *phead;
            if !policy.is_punct(&token.pos) {
                if let Some(b) = bin {
                    bin_totals[b] += 1;
                    if wrong {
                        bin_errors[b] += 1;
                    }
                }
            }
            if let Some(group) = groups.group(&token.pos) {
                let gi = group_names.iter().position(|g| *g == group).unwrap();
                group_totals[gi] += 1;
                if wrong {
                    group_errors[gi] += 1;
                }
            }
        }
    }

    let length_bins = (0..n_bins)
        .map(|b| {
            let lo = b * bin_width + 1;
            let hi = (b + 1) * bin_width;
            BucketRate::new("length", format!("{lo}-{hi}"), bin_errors[b], bin_totals[b])
        })
        .collect();
    let pos_groups = group_names
        .iter()
        .enumerate()
        .map(|(gi, name)| {
            BucketRate::new("pos", name.to_string(), group_errors[gi], group_totals[gi])
        })
        .collect();
    Ok((length_bins, pos_groups))
}

fn check_aligned(gold: &[SentenceRecord], pred: &[PredictedTree]) -> Result<(), EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::SentenceCount {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    for (i, (rec, tree)) in gold.iter().zip(pred).enumerate() {
        if rec.tokens.len() != tree.len() {
            return Err(EvalError::LengthMismatch {
                sentence: i + 1,
                gold: rec.tokens.len(),
                pred: tree.len(),
            });
        }
        if rec.gold_heads().is_none() {
            return Err(EvalError::MissingGold { sentence: i + 1 });
        }
    }
    Ok(())
}
