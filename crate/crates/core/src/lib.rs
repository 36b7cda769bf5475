//! Knowledge-graph subgraph reasoning for explainable recommendation.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every algorithmic piece:
//! the typed triple store, TransE pretraining, attention-driven subgraph
//! diffusion, subgraph-encoded candidate scoring, exact gradients with Adam,
//! ranking metrics, and the review-extraction / explanation rules that sit
//! between the recommender and a chat model. File formats, the HTTP chat
//! client and the command line live in the `kgsr` companion crate.
#![no_std]

extern crate alloc;

pub mod diffusion;
pub mod embedding;
pub mod error;
pub mod extract;
pub mod graph;
pub mod interactions;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod paths;
pub mod prompt;
pub mod scoring;
pub mod train;
pub mod transe;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::diffusion::{diffuse, AttentionParams, DiffusionConfig, SubgraphState};
    pub use crate::embedding::EmbeddingTable;
    pub use crate::error::{Error, Result};
    pub use crate::graph::{Direction, EntityId, EntityKind, KnowledgeGraph, RelationId, Triple};
    pub use crate::interactions::InteractionSet;
    pub use crate::metrics::{evaluate_model, evaluate_ranking, EvalReport, RankingMetrics};
    pub use crate::model::{Checkpoint, ModelParams};
    pub use crate::paths::{extract_paths, ExplanationPath};
    pub use crate::scoring::{score_candidates, CandidateScore, EncoderParams};
    pub use crate::train::{train, TrainConfig};
    pub use crate::transe::{transe_pretrain, TranseConfig};
}
