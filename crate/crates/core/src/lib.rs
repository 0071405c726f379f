//! Cross-lingual alignment of national product classifications.
//!
//! Category descriptions from two hierarchical taxonomies are turned into
//! vectors (averaged word embeddings or trained document vectors), the two
//! vector spaces are aligned with an orthogonal map, and categories are paired
//! by cosine or CSLS retrieval, by bag-of-words overlap, or by a
//! hierarchy-constrained combination of either. The [`eval`] module ingests
//! human annotations of the resulting pairs and computes accuracy and Fisher's
//! exact test for comparing methods.
//!
//! Module map:
//!
//! - [`taxonomy`]: code parsing, taxonomy files, hierarchy queries
//! - [`embeddings`]: vector files, tokenizer, category vectors, normalization,
//!   whitening, PCA
//! - [`trainer`]: CBOW word vectors and PV-DBOW document vectors
//! - [`align`]: Procrustes, Vecmap-style transform, refinement, self-learning
//! - [`matching`]: CSLS neighborhoods, vector/string/hierarchical matchers
//! - [`eval`]: annotation files, top-n selection, accuracy, Fisher's exact test
//! - [`pipeline`]: config-driven batch runs used by the `taxomap` binary

pub mod align;
pub mod embeddings;
mod error;
pub mod eval;
pub mod matching;
pub mod pipeline;
pub mod synthetic;
pub mod taxonomy;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};

/// Dense row-major-by-convention matrix type used throughout: one row per
/// token, category, or document.
pub type Matrix = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;
