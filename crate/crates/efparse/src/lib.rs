//! Easy-first dependency parsing with recursive subtree encoders.
//!
//! The parser builds a dependency tree bottom-up by repeatedly attaching one
//! of two adjacent nodes in a *pending* list under the other, always taking
//! the highest-scoring attachment anywhere in the sentence. Every partially
//! built subtree is summarized by a vector representation maintained with a
//! child-sum tree-LSTM (or a simplified recursive-convolutional composer),
//! and the attachment scorer reads a window of those representations.
//!
//! The crate is self-contained: it ships a small reverse-mode autodiff tape
//! ([`tape`]), CoNLL treebank I/O and attachment metrics ([`conll`], [`eval`]),
//! the encoders ([`bilstm`], [`subtree`]), the parser state machine and
//! trainer ([`parser`]), and a command-line front end (`efparse` binary).

pub mod bilstm;
pub mod config;
pub mod conll;
pub mod embed;
pub mod eval;
pub mod model;
pub mod params;
pub mod parser;
pub mod subtree;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod vocab;





pub use params::ParameterStore;
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
