//! Edge-weighted multi-head graph attention model.
//!
//! Three attention layers over the sparse graph, ReLU head activations,
//! head concatenation, global average pooling and a 2-way softmax head.
//! Attention logits are LeakyReLU(a^T [W h_i || W h_j]) scaled by the sparse
//! edge weight before the per-neighborhood softmax; each node sits in its own
//! neighborhood with edge weight 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::BrainGraph;
use crate::param::{ParamId, ParamSet};
use crate::rng::RngStream;
use crate::sparse::{
    sparsify_backward, sparsify_traced, AsymConvParams, SparseGraph, SparsifyTrace,
    DEFAULT_ZERO_SOFTMAX_EPS,
};
use crate::tensor::{
    glorot_uniform, leaky_relu_grad, matmul, sigmoid, softmax_backward_slice, softmax_slice,
    Tensor2,
};

fn default_heads() -> usize {
    3
}
fn default_hidden_dims() -> Vec<usize> {
    vec![16, 16, 16]
}
fn default_xi() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}
fn default_leaky_slope() -> f64 {
    0.2
}
fn default_eps() -> f64 {
    DEFAULT_ZERO_SOFTMAX_EPS
}
fn default_conv_layers() -> usize {
    2
}
fn default_kernel_size() -> usize {
    3
}

/// Architecture hyperparameters. The two flags switch off the edge weighting
/// and the sparse interaction block for ablations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_hidden_dims")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_xi")]
    pub xi: f64,
    #[serde(default = "default_true")]
    pub edge_features_enabled: bool,
    #[serde(default = "default_true")]
    pub sparse_interaction_enabled: bool,
    #[serde(default = "default_leaky_slope")]
    pub leaky_slope: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_conv_layers")]
    pub conv_layers: usize,
    #[serde(default = "default_kernel_size")]
    pub kernel_size: usize,
    /// Eq-14-style aggregation with the self term; turning this off drops
    /// the alpha_ii * W h_i contribution (no correctness claim attached).
    #[serde(default = "default_true")]
    pub include_self_term: bool,
    /// Average instead of concatenating heads at the final layer.
    #[serde(default)]
    pub average_final_heads: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            heads: default_heads(),
            hidden_dims: default_hidden_dims(),
            xi: default_xi(),
            edge_features_enabled: true,
            sparse_interaction_enabled: true,
            leaky_slope: default_leaky_slope(),
            eps: default_eps(),
            conv_layers: default_conv_layers(),
            kernel_size: default_kernel_size(),
            include_self_term: true,
            average_final_heads: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 {
            return Err(Error::config("need at least one attention head"));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::config("hidden dims must all be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.xi) {
            return Err(Error::config(format!("xi must lie in [0,1], got {}", self.xi)));
        }
        if self.leaky_slope < 0.0 {
            return Err(Error::config("leaky slope must be nonnegative"));
        }
        if self.eps <= 0.0 {
            return Err(Error::config("eps must be positive"));
        }
        Ok(())
    }
}

/// Parameter handles for one head: W (F_in x F_out) and the attention
/// vector a (2*F_out x 1).
#[derive(Debug, Clone)]
pub struct HeadIds {
    pub w: ParamId,
    pub a: ParamId,
}

#[derive(Debug, Clone)]
pub struct GatLayerIds {
    pub heads: Vec<HeadIds>,
    pub f_in: usize,
    pub f_out: usize,
}

/// Parameter handles plus fixed architecture; the values live in a ParamSet
/// so optimization and gradient checking can treat them uniformly.
#[derive(Debug, Clone)]
pub struct ModelArch {
    pub conv: AsymConvParams,
    pub layers: Vec<GatLayerIds>,
    pub fc_w: ParamId,
    pub fc_b: ParamId,
    pub n_features: usize,
    pub config: ModelConfig,
}

impl ModelArch {
    /// Registers all trainable tensors into `set` with glorot init (zeros for
    /// the classifier bias). Construction order is deterministic, so the same
    /// seed always yields the same parameter vector.
    pub fn init(
        set: &mut ParamSet,
        config: &ModelConfig,
        n_features: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        config.validate()?;
        if n_features == 0 {
            return Err(Error::config("need at least one node feature"));
        }
        let conv = AsymConvParams::init(set, rng, config.conv_layers, config.kernel_size)?;
        let mut layers = Vec::with_capacity(config.hidden_dims.len());
        let mut f_in = n_features;
        let last = config.hidden_dims.len() - 1;
        for (l, &f_out) in config.hidden_dims.iter().enumerate() {
            let mut heads = Vec::with_capacity(config.heads);
            for t in 0..config.heads {
                let w = set.add(format!("gat.l{l}.h{t}.w"), glorot_uniform(f_in, f_out, rng));
                let a = set.add(
                    format!("gat.l{l}.h{t}.a"),
                    glorot_uniform(2 * f_out, 1, rng),
                );
                heads.push(HeadIds { w, a });
            }
            layers.push(GatLayerIds { heads, f_in, f_out });
            f_in = if l == last && config.average_final_heads {
                f_out
            } else {
                config.heads * f_out
            };
        }
        let fc_w = set.add("fc.w", glorot_uniform(f_in, 2, rng));
        let fc_b = set.add("fc.b", Tensor2::zeros(1, 2));
        Ok(ModelArch {
            conv,
            layers,
            fc_w,
            fc_b,
            n_features,
            config: config.clone(),
        })
    }

    pub fn pooled_width(&self) -> usize {
        let last = self.layers.last().expect("at least one layer");
        if self.config.average_final_heads {
            last.f_out
        } else {
            self.config.heads * last.f_out
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeadTrace {
    pub m: Tensor2,     // h_in W
    pub u: Vec<f64>,    // a1 . m_i
    pub v: Vec<f64>,    // a2 . m_i
    pub c: Tensor2,     // u_i + v_j on support
    pub g: Tensor2,     // LeakyReLU(c) on support
    pub alpha: Tensor2, // attention, rows sum to 1 on support
    pub s: Tensor2,     // pre-ReLU aggregate
    pub out: Tensor2,
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub input: Tensor2,
    pub heads: Vec<HeadTrace>,
}

/// Everything saved by a forward pass; holds what the backward pass reads.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub sparse: Option<(SparseGraph, SparsifyTrace)>,
    pub e_tilde: Tensor2,
    pub a_s: Tensor2,
    pub neighborhoods: Vec<Vec<usize>>,
    pub layers: Vec<LayerTrace>,
    pub pooled: Vec<f64>,
    pub logits: [f64; 2],
    pub probs: [f64; 2],
}

/// Attention coefficients for a single head over the given sparse graph.
/// Row i is a softmax over N(i) (from A_s) plus i itself, zero elsewhere.
pub fn attention_coefficients(
    h_nodes: &Tensor2,
    w: &Tensor2,
    a: &Tensor2,
    leaky_slope: f64,
    e_tilde: &Tensor2,
    neighborhoods: &[Vec<usize>],
) -> Result<HeadAttention> {
    let m = matmul(h_nodes, w)?;
    let f_out = m.cols();
    debug_assert_eq!(a.rows(), 2 * f_out);
    let n = m.rows();
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    for i in 0..n {
        let row = m.row(i);
        let mut ui = 0.0;
        let mut vi = 0.0;
        for f in 0..f_out {
            ui += row[f] * a.at(f, 0);
            vi += row[f] * a.at(f_out + f, 0);
        }
        u[i] = ui;
        v[i] = vi;
    }
    let mut c = Tensor2::zeros(n, n);
    let mut g = Tensor2::zeros(n, n);
    let mut alpha = Tensor2::zeros(n, n);
    for i in 0..n {
        let nb = &neighborhoods[i];
        let mut logits = Vec::with_capacity(nb.len());
        for &j in nb {
            let cij = u[i] + v[j];
            let gij = if cij > 0.0 { cij } else { leaky_slope * cij };
            c.set(i, j, cij);
            g.set(i, j, gij);
            logits.push(gij * e_tilde.at(i, j));
        }
        let probs = softmax_slice(&logits);
        for (&j, p) in nb.iter().zip(probs) {
            alpha.set(i, j, p);
        }
    }
    Ok(HeadAttention { m, u, v, c, g, alpha })
}

/// Intermediates from one head's attention computation.
pub struct HeadAttention {
    pub m: Tensor2,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub c: Tensor2,
    pub g: Tensor2,
    pub alpha: Tensor2,
}

/// Columnwise mean over nodes.
pub fn global_avg_pool(h_nodes: &Tensor2) -> Vec<f64> {
    let (n, f) = (h_nodes.rows(), h_nodes.cols());
    assert!(n >= 1, "pooling needs at least one node");
    let mut out = vec![0.0; f];
    for i in 0..n {
        for (o, &v) in out.iter_mut().zip(h_nodes.row(i)) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= n as f64;
    }
    out
}

fn head_forward(
    input: &Tensor2,
    w: &Tensor2,
    a: &Tensor2,
    config: &ModelConfig,
    e_tilde: &Tensor2,
    neighborhoods: &[Vec<usize>],
) -> Result<HeadTrace> {
    let att = attention_coefficients(input, w, a, config.leaky_slope, e_tilde, neighborhoods)?;
    let n = input.rows();
    let f_out = att.m.cols();
    let mut s = Tensor2::zeros(n, f_out);
    for i in 0..n {
        for &j in &neighborhoods[i] {
            if j == i && !config.include_self_term {
                continue;
            }
            let aij = att.alpha.at(i, j);
            let mrow = att.m.row(j);
            for f in 0..f_out {
                s.add_at(i, f, aij * mrow[f]);
            }
        }
    }
    let out = s.map(|x| x.max(0.0));
    Ok(HeadTrace {
        m: att.m,
        u: att.u,
        v: att.v,
        c: att.c,
        g: att.g,
        alpha: att.alpha,
        s,
        out,
    })
}

fn concat_heads(heads: &[HeadTrace], average: bool) -> Tensor2 {
    let n = heads[0].out.rows();
    let f_out = heads[0].out.cols();
    if average {
        let mut out = Tensor2::zeros(n, f_out);
        for h in heads {
            out.add_scaled(&h.out, 1.0 / heads.len() as f64);
        }
        out
    } else {
        let mut out = Tensor2::zeros(n, heads.len() * f_out);
        for (t, h) in heads.iter().enumerate() {
            for i in 0..n {
                for f in 0..f_out {
                    out.set(i, t * f_out + f, h.out.at(i, f));
                }
            }
        }
        out
    }
}

/// Full forward pass. `graph.x` is used as-is; feature normalization happens
/// upstream in the training pipeline.
pub fn forward(graph: &BrainGraph, arch: &ModelArch, set: &ParamSet) -> Result<ForwardTrace> {
    let cfg = &arch.config;
    if graph.n_features() != arch.n_features {
        return Err(Error::config(format!(
            "graph has {} node features but the model expects {}",
            graph.n_features(),
            arch.n_features
        )));
    }
    let n = graph.n_nodes();

    let (e_s, a_s, sparse) = if cfg.sparse_interaction_enabled {
        let (sg, trace) = sparsify_traced(graph, &arch.conv, set, cfg.xi, cfg.eps)?;
        (sg.e_s.clone(), sg.a_s.clone(), Some((sg, trace)))
    } else {
        (sigmoid(&graph.e), graph.a.clone(), None)
    };

    let mut neighborhoods = Vec::with_capacity(n);
    for i in 0..n {
        let mut nb: Vec<usize> = (0..n).filter(|&j| a_s.at(i, j) > 0.5).collect();
        if !nb.contains(&i) {
            nb.push(i);
            nb.sort_unstable();
        }
        neighborhoods.push(nb);
    }

    // per-pair logit scale: 1 on the diagonal, E_s off it (or 1 everywhere
    // when the edge-feature ablation is active)
    let mut e_tilde = Tensor2::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = if i == j || !cfg.edge_features_enabled {
                1.0
            } else {
                e_s.at(i, j)
            };
            e_tilde.set(i, j, v);
        }
    }

    let mut layers = Vec::with_capacity(arch.layers.len());
    let mut h = graph.x.clone();
    let n_layers = arch.layers.len();
    for (l, layer) in arch.layers.iter().enumerate() {
        let mut heads = Vec::with_capacity(layer.heads.len());
        for ids in &layer.heads {
            heads.push(head_forward(
                &h,
                set.value(ids.w),
                set.value(ids.a),
                cfg,
                &e_tilde,
                &neighborhoods,
            )?);
        }
        let average = cfg.average_final_heads && l == n_layers - 1;
        let next = concat_heads(&heads, average);
        layers.push(LayerTrace { input: h, heads });
        h = next;
    }

    let pooled = global_avg_pool(&h);
    let fc_w = set.value(arch.fc_w);
    let fc_b = set.value(arch.fc_b);
    let mut logits = [fc_b.at(0, 0), fc_b.at(0, 1)];
    for (r, &p) in pooled.iter().enumerate() {
        logits[0] += p * fc_w.at(r, 0);
        logits[1] += p * fc_w.at(r, 1);
    }
    let probs_v = softmax_slice(&logits);
    let probs = [probs_v[0], probs_v[1]];

    Ok(ForwardTrace {
        sparse,
        e_tilde,
        a_s,
        neighborhoods,
        layers,
        pooled,
        logits,
        probs,
    })
}

/// Class probabilities only.
pub fn predict_probs(graph: &BrainGraph, arch: &ModelArch, set: &ParamSet) -> Result<[f64; 2]> {
    Ok(forward(graph, arch, set)?.probs)
}

/// Backward pass from d(loss)/d(logits); accumulates into `set` grads.
pub fn backward(
    graph: &BrainGraph,
    arch: &ModelArch,
    set: &mut ParamSet,
    trace: &ForwardTrace,
    dlogits: [f64; 2],
) {
    let cfg = &arch.config;
    let n = graph.n_nodes();
    let width = arch.pooled_width();

    // classifier
    let mut dpooled = vec![0.0; width];
    {
        let fc_w = set.value(arch.fc_w).clone();
        let gb = set.grad_mut(arch.fc_b);
        gb.add_at(0, 0, dlogits[0]);
        gb.add_at(0, 1, dlogits[1]);
        let gw = set.grad_mut(arch.fc_w);
        for (r, &p) in trace.pooled.iter().enumerate() {
            gw.add_at(r, 0, p * dlogits[0]);
            gw.add_at(r, 1, p * dlogits[1]);
            dpooled[r] = dlogits[0] * fc_w.at(r, 0) + dlogits[1] * fc_w.at(r, 1);
        }
    }

    // pooling: every node shares the column gradient equally
    let mut dh = Tensor2::zeros(n, width);
    for i in 0..n {
        for (f, &dp) in dpooled.iter().enumerate() {
            dh.set(i, f, dp / n as f64);
        }
    }

    let edge_grads_flow =
        cfg.edge_features_enabled && cfg.sparse_interaction_enabled;
    let mut d_e_s = Tensor2::zeros(n, n);

    let n_layers = arch.layers.len();
    for (l, (layer, ltrace)) in arch.layers.iter().zip(&trace.layers).enumerate().rev() {
        let average = cfg.average_final_heads && l == n_layers - 1;
        let f_out = layer.f_out;
        let mut dinput = Tensor2::zeros(ltrace.input.rows(), ltrace.input.cols());
        for (t, (ids, htrace)) in layer.heads.iter().zip(&ltrace.heads).enumerate() {
            // slice this head's share of the upstream gradient
            let mut dout = Tensor2::zeros(n, f_out);
            for i in 0..n {
                for f in 0..f_out {
                    let v = if average {
                        dh.at(i, f) / layer.heads.len() as f64
                    } else {
                        dh.at(i, t * f_out + f)
                    };
                    dout.set(i, f, v);
                }
            }

            // ReLU
            let mut ds = Tensor2::zeros(n, f_out);
            for i in 0..n {
                for f in 0..f_out {
                    if htrace.s.at(i, f) > 0.0 {
                        ds.set(i, f, dout.at(i, f));
                    }
                }
            }

            let mut dm = Tensor2::zeros(n, f_out);
            let mut du = vec![0.0; n];
            let mut dv = vec![0.0; n];
            let a_val = set.value(ids.a).clone();
            let w_val = set.value(ids.w).clone();

            for i in 0..n {
                let nb = &trace.neighborhoods[i];
                // gradient into alpha from the aggregation
                let mut dalpha = Vec::with_capacity(nb.len());
                let dsrow = ds.row(i);
                for &j in nb {
                    if j == i && !cfg.include_self_term {
                        dalpha.push(0.0);
                        continue;
                    }
                    let mrow = htrace.m.row(j);
                    let mut acc = 0.0;
                    for f in 0..f_out {
                        acc += dsrow[f] * mrow[f];
                    }
                    dalpha.push(acc);
                    // dm_j += alpha_ij * ds_i
                    let aij = htrace.alpha.at(i, j);
                    for f in 0..f_out {
                        dm.add_at(j, f, aij * dsrow[f]);
                    }
                }
                // softmax backward over the neighborhood
                let alpha_row: Vec<f64> = nb.iter().map(|&j| htrace.alpha.at(i, j)).collect();
                let dlogit = softmax_backward_slice(&alpha_row, &dalpha);
                for (&j, dl) in nb.iter().zip(dlogit) {
                    let et = trace.e_tilde.at(i, j);
                    let dg = dl * et;
                    if edge_grads_flow && j != i {
                        d_e_s.add_at(i, j, dl * htrace.g.at(i, j));
                    }
                    let dc = dg * leaky_relu_grad(htrace.c.at(i, j), cfg.leaky_slope);
                    du[i] += dc;
                    dv[j] += dc;
                }
            }

            // u = M a1, v = M a2
            {
                let ga = set.grad_mut(ids.a);
                for i in 0..n {
                    let mrow = htrace.m.row(i);
                    for f in 0..f_out {
                        ga.add_at(f, 0, du[i] * mrow[f]);
                        ga.add_at(f_out + f, 0, dv[i] * mrow[f]);
                    }
                }
            }
            for i in 0..n {
                for f in 0..f_out {
                    dm.add_at(i, f, du[i] * a_val.at(f, 0) + dv[i] * a_val.at(f_out + f, 0));
                }
            }

            // m = input W
            let dw = matmul(&ltrace.input.transpose(), &dm).expect("shapes fixed");
            set.grad_mut(ids.w).add_scaled(&dw, 1.0);
            let dinp = matmul(&dm, &w_val.transpose()).expect("shapes fixed");
            dinput.add_scaled(&dinp, 1.0);
        }
        dh = dinput;
    }

    if edge_grads_flow {
        if let Some((_, strace)) = &trace.sparse {
            sparsify_backward(strace, &arch.conv, set, &d_e_s);
        }
    }
}
