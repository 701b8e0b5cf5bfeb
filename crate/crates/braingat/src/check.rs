//! End-to-end gradient checking: analytic backward vs central differences
//! through the whole model (sparsification, attention layers, pooling,
//! classifier, focal loss).

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gat::{backward, forward, ModelArch, ModelConfig};
use crate::graph::{build_graph, BrainGraph, NodeFeatureTable, TimeSeriesMatrix};
use crate::param::{grad_check, ParamSet};
use crate::rng::RngStream;
use crate::tensor::Tensor2;
use crate::train::{focal_loss, focal_loss_grad_p};

pub const GRAD_CHECK_STEP: f64 = 1e-5;
pub const GRAD_CHECK_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// A small random-but-valid graph: correlated noise time series run through
/// the normal construction path, plus standard-normal node features.
pub fn random_graph(n_nodes: usize, n_features: usize, rng: &mut RngStream) -> Result<BrainGraph> {
    let k = 24usize;
    let mut ts = Tensor2::zeros(n_nodes, k);
    let latent: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
    for i in 0..n_nodes {
        for t in 0..k {
            ts.set(i, t, 0.5 * latent[t] + rng.normal());
        }
    }
    let mut x = Tensor2::zeros(n_nodes, n_features);
    for i in 0..n_nodes {
        for c in 0..n_features {
            x.set(i, c, rng.normal());
        }
    }
    let names = (0..n_features).map(|c| format!("f{c}")).collect();
    let ts = TimeSeriesMatrix::new(ts)?;
    let nodes = NodeFeatureTable::new(x, names)?;
    build_graph(&ts, &nodes, Some(1))
}

fn model_focal_loss(
    graph: &BrainGraph,
    arch: &ModelArch,
    set: &ParamSet,
    alpha: f64,
    gamma: f64,
) -> Result<f64> {
    let probs = forward(graph, arch, set)?.probs;
    focal_loss(&[probs[1]], &[graph.label.unwrap_or(1)], alpha, gamma)
}

/// Max relative error between the analytic gradient of the single-graph
/// focal loss and central finite differences, over every parameter entry.
pub fn full_model_grad_check(
    n_nodes: usize,
    n_features: usize,
    mcfg: &ModelConfig,
    seed: u64,
    h: f64,
) -> Result<f64> {
    let (alpha, gamma) = (0.25, 2.0);
    let mut rng = RngStream::new(seed);
    let graph = random_graph(n_nodes, n_features, &mut rng)?;
    let mut set = ParamSet::new();
    let arch = ModelArch::init(&mut set, mcfg, n_features, &mut rng)?;

    set.zero_grads();
    let trace = forward(&graph, &arch, &set)?;
    let y = graph.label.unwrap_or(1);
    let dp = focal_loss_grad_p(&[trace.probs[1]], &[y], alpha, gamma)[0];
    let dz = dp * trace.probs[1] * (1.0 - trace.probs[1]);
    backward(&graph, &arch, &mut set, &trace, [-dz, dz]);

    grad_check(&mut set, |s| model_focal_loss(&graph, &arch, s, alpha, gamma), h)
}

fn small_config() -> ModelConfig {
    ModelConfig {
        heads: 2,
        hidden_dims: vec![3, 3],
        ..Default::default()
    }
}

/// The standard check battery: full model under the default configuration
/// and under each ablation flag, plus a larger 8-node model.
pub fn run_gradcheck_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut cases: Vec<(String, usize, usize, ModelConfig)> = Vec::new();

    cases.push(("full_model_default".into(), 6, 4, small_config()));
    cases.push((
        "sparse_interaction_off".into(),
        6,
        4,
        ModelConfig {
            sparse_interaction_enabled: false,
            ..small_config()
        },
    ));
    cases.push((
        "edge_features_off".into(),
        6,
        4,
        ModelConfig {
            edge_features_enabled: false,
            ..small_config()
        },
    ));
    cases.push((
        "no_self_term".into(),
        6,
        4,
        ModelConfig {
            include_self_term: false,
            ..small_config()
        },
    ));
    cases.push((
        "averaged_final_heads".into(),
        6,
        4,
        ModelConfig {
            average_final_heads: true,
            ..small_config()
        },
    ));
    cases.push((
        "full_model_8n_5f_2h".into(),
        8,
        5,
        ModelConfig {
            heads: 2,
            hidden_dims: vec![4, 4, 4],
            ..Default::default()
        },
    ));

    let mut reports = Vec::with_capacity(cases.len());
    for (name, n, f, mcfg) in cases {
        let err = full_model_grad_check(n, f, &mcfg, seed, GRAD_CHECK_STEP)?;
        reports.push(GradCheckReport {
            name,
            max_rel_err: err,
            tolerance: GRAD_CHECK_TOL,
            passed: err <= GRAD_CHECK_TOL,
        });
    }
    Ok(reports)
}
