//! Semantic-neighborhood decoding engine and spatial-grounding benchmark
//! pipeline for 3D medical images.
//!
//! The engine side loads token-embedding matrices, partitions the vocabulary
//! into content and non-content tokens, precomputes exact cosine K-nearest-
//! neighbor tables, and executes decoding steps that rescore candidates by
//! the probability mass of their semantic neighborhood. The benchmark side
//! reads NIfTI-1 volumes and label maps, reorients and windows them, renders
//! multi-planar reconstructions with visual prompt overlays, generates
//! spatial-relation question sets, and scores model responses with Bayesian
//! credible intervals.

pub mod decode;
pub mod embedding;
pub mod eval;
pub mod neighbors;
pub mod overlay;
pub mod protocol;
pub mod qa;
pub mod relations;
pub mod vocab;
pub mod volume;

pub use embedding::{EmbeddingMatrix, TokenizerMeta};
pub use neighbors::{NeighborBuildConfig, NeighborTable};
pub use vocab::VocabPartition;
