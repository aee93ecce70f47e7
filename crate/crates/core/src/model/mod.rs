//! The classifier: encoders, similarity features, fusion, losses and the
//! model file.

mod config;
pub mod file;
mod network;

pub use config::{AblationFlags, ModelConfig, MODEL_KEYS};
pub use network::{
    build_vocab, concept_features, forward, forward_graph, one_hot, predict, predict_from_logits, prepare, total_loss,
    triplet_loss, triplet_loss_graph, ForwardOutput, Graph, ModelState, ParamVars, Prepared, Triplet,
};
