//! Brain-graph classification with sparse edge-weighted graph attention.
//!
//! The pipeline: per-subject region time series and node features are turned
//! into a fused weighted graph (correlation and distance metrics), a learned
//! sparsification block prunes the edge matrix, a stack of edge-weighted
//! multi-head attention layers embeds the nodes, and a pooled softmax head
//! classifies the subject. Training uses focal loss with Adam under
//! stratified k-fold cross-validation. All gradients are derived by hand and
//! validated against finite differences.

pub mod check;
pub mod data;
pub mod error;
pub mod gat;
pub mod graph;
pub mod optim;
pub mod param;
pub mod rng;
pub mod sparse;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use gat::{forward, predict_probs, ModelArch, ModelConfig};
pub use graph::{build_graph, BrainGraph, MetricMask};
pub use param::{grad_check, ParamId, ParamSet};
pub use rng::RngStream;
pub use tensor::Tensor2;
pub use train::{kfold_cv, train_model, CvSummary, Metrics, TrainConfig, TrainedModel};
