//! Knowledge-aware recommendation over a collaborative knowledge graph.
//!
//! The engine merges a user-item interaction graph with a knowledge graph
//! into one relation-typed structure, learns TransR-style entity and
//! relation embeddings jointly with an attentive multi-hop propagation
//! model under a pairwise ranking loss, and serves full-ranking top-K
//! recommendation with attention-path explanations.
//!
//! Library layout:
//!
//! - [`ckg`]: dataset loaders and the unified sparse graph (CSR by head).
//! - [`diffcore`]: dense tensors, the reverse-mode tape, Adam, checkpoints.
//! - [`kge`]: relation-projected translation scoring and its ranking loss.
//! - [`model`]: parameter registry, layer configuration, initialization.
//! - [`propagation`]: attention, neighborhood aggregation, final scores.
//! - [`training`]: negative sampling and the alternating two-phase trainer.
//! - [`evaluation`]: recall/ndcg at K over full rankings, sparsity groups.
//! - [`explain`]: highest-attention path extraction between user and item.
//! - [`synth`]: seeded synthetic dataset generation.
//! - [`gradcheck`]: finite-difference audit of every gradient path.
//! - [`oracle`]: brute-force reference implementations for tests.
//!
//! The `examples/` directory demonstrates each capability end to end; the
//! `kgat` binary wraps the same entry points as subcommands.

pub mod ckg;
pub mod cli;
pub mod diffcore;
pub mod evaluation;
pub mod explain;
pub mod gradcheck;
pub mod kge;
pub mod model;
pub mod oracle;
pub mod propagation;
pub mod synth;
pub mod training;

#[cfg(test)]
mod testutil;

pub use ckg::{build_ckg, load_interactions, load_kg, CollaborativeKG, InteractionSet, KnowledgeTriples};
pub use model::{Aggregator, AttentionMode, LayerConfig, LayerRepresentations};
pub use training::{train, TrainConfig, TrainOutcome};
