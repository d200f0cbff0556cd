//! Training-free image-text retrieval.
//!
//! Query image embeddings are fused with embeddings of predicted captions
//! (weighted sum, optionally also fusing each index entry with the image),
//! searched exactly by cosine similarity over a caption index, and, for
//! item-level retrieval, re-ranked by each candidate's best match against the
//! individually embedded predicted items.
//!
//! Modules:
//! - [`embedding`]: vectors, cosine similarity, fusion
//! - [`encoder`]: synthetic, file-backed and remote text/image encoders; F4E files
//! - [`index`]: caption ingestion, index build, F4I persistence
//! - [`retrieval`]: exact top-k, fused and bi-directional search
//! - [`rerank`]: item parsing and max-similarity re-ranking
//! - [`metrics`], [`eval`]: Recall@k, mAP, corpus evaluation, weight sweeps
//! - [`dataset`], [`synth`]: query bundles and synthetic corpora

mod binio;
pub mod dataset;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod index;
pub mod metrics;
pub mod rerank;
pub mod retrieval;
pub mod synth;

pub use embedding::{cosine_similarity, fuse, l2_normalize, EmbeddingVector, FusionWeights};
pub use encoder::{open_encoder, EncoderKind, EncoderSpec, TextEncoder};
pub use error::{Error, Result};
pub use eval::{evaluate_corpus, sweep_fusion_weight, EvalConfig, EvalReport, SweepResult};
pub use index::{build_index, Caption, CaptionIndex, CaptionKind};
pub use rerank::{parse_items, rerank, retrieve_and_rerank, ParsedItems};
pub use retrieval::{
    search_bidirectional, search_top1_fused, search_topk, search_topk_naive, QueryBundle, RankedList,
    Stage, TextSource,
};
