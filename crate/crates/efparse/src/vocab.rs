//! Symbol tables with reserved special entries.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Reserved ids present in every vocabulary.
pub const UNK_ID: usize = 0;
pub const PAD_LEFT_ID: usize = 1;
pub const PAD_RIGHT_ID: usize = 2;
pub const ROOT_ID: usize = 3;

pub const SPECIAL_SYMBOLS: [&str; 4] = ["<unk>", "<pad-l>", "<pad-r>", "<root>"];

/// Symbol used by relation vocabularies for arcs without a label
/// (unlabeled parsing mode). Interned first, so its id is stable.
pub const NO_REL_SYMBOL: &str = "<no-rel>";

/// Bidirectional symbol/id map. Ids 0..=3 are the specials above; the rest
/// are assigned in first-occurrence order, which makes construction
/// deterministic for a fixed corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    symbols: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let symbols: Vec<String> = SPECIAL_SYMBOLS.iter().map(|s| s.to_string()).collect();
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Vocab { symbols, index }
    }

    /// Intern a symbol, returning its id. Existing symbols keep their id.
    pub fn intern(&mut self, symbol: &str) -> usize {
        if let Some(&id) = self.index.get(symbol) {
            return id;
        }
        let id = self.symbols.len();
        self.symbols.push(symbol.to_string());
        self.index.insert(symbol.to_string(), id);
        id
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn id_or_unk(&self, symbol: &str) -> usize {
        self.id(symbol).unwrap_or(UNK_ID)
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false // specials are always present
    }

    /// Number of non-special entries.
    pub fn non_special_count(&self) -> usize {
        self.symbols.len() - SPECIAL_SYMBOLS.len()
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < SPECIAL_SYMBOLS.len()
    }

    /// Ids of non-special symbols.
    pub fn regular_ids(&self) -> impl Iterator<Item = usize> {
        SPECIAL_SYMBOLS.len()..self.symbols.len()
    }
}

impl From<Vec<String>> for Vocab {
    fn from(symbols: Vec<String>) -> Self {
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Vocab { symbols, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.symbols
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_are_reserved() {
        let v = Vocab::new();
        assert_eq!(v.id("<unk>"), Some(UNK_ID));
        assert_eq!(v.id("<root>"), Some(ROOT_ID));
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn interning_is_stable_and_bijective() {
        let mut v = Vocab::new();
        let a = v.intern("cat");
        let b = v.intern("dog");
        assert_eq!(v.intern("cat"), a);
        assert_ne!(a, b);
        assert_eq!(v.symbol(a), Some("cat"));
        assert_eq!(v.id("dog"), Some(b));
        assert_eq!(v.non_special_count(), 2);
    }

    #[test]
    fn unknown_maps_to_unk() {
        let v = Vocab::new();
        assert_eq!(v.id_or_unk("never-seen"), UNK_ID);
    }

    #[test]
    fn serde_round_trip() {
        let mut v = Vocab::new();
        v.intern("alpha");
        v.intern("beta");
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("beta"), v.id("beta"));
    }
}
