//! Building blocks for unifying remote-sensing annotations into an
//! image-caption corpus and for evaluating contrastively aligned
//! image/text embeddings.
//!
//! The data path is `mask2box` (segmentation masks to boxes), `box2caption`
//! (boxes to five captions), `dedup` (perceptual-hash near-duplicate
//! removal) and `assembly` (ingest, merge, statistics). The numerical side
//! is `contrastive` (bidirectional InfoNCE, analytic gradients, a toy
//! two-tower trainer) and `eval` (retrieval, zero-shot, k-NN, linear probe,
//! counting) over embedding banks stored in the `emb` file format.

pub mod assembly;
pub mod box2caption;
pub mod contrastive;
pub mod dedup;
pub mod emb;
pub mod error;
pub mod eval;
pub mod mask2box;
pub mod text;

pub use error::{Error, ErrorKind, Result};
