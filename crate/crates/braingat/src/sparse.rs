//! Sparse interaction mechanism over the fused edge matrix.
//!
//! Pipeline: asymmetric convolution block (1xk, kx1 and kxk branches summed,
//! sigmoid per layer) -> elementwise threshold at xi -> zero-preserving row
//! softmax -> sparse adjacency derivation. The keep/drop mask is locally
//! constant, so gradients flow into the kernels only through retained
//! entries.

use crate::error::{Error, Result};
use crate::graph::BrainGraph;
use crate::param::{ParamId, ParamSet};
use crate::rng::RngStream;
use crate::tensor::{
    conv2d_zeropad, conv2d_zeropad_backward, glorot_uniform, sigmoid_scalar, Tensor2,
};

pub const DEFAULT_ZERO_SOFTMAX_EPS: f64 = 1e-12;

/// Parameter handles for one conv layer: row (1xk), column (kx1) and square
/// (kxk) kernels.
#[derive(Debug, Clone)]
pub struct ConvKernelIds {
    pub row: ParamId,
    pub col: ParamId,
    pub all: ParamId,
}

/// Asymmetric convolution stack configuration plus parameter handles.
#[derive(Debug, Clone)]
pub struct AsymConvParams {
    pub n_layers: usize,
    pub kernel_size: usize,
    pub layers: Vec<ConvKernelIds>,
}

impl AsymConvParams {
    /// Registers glorot-initialized kernels for `n_layers` layers into `set`.
    pub fn init(
        set: &mut ParamSet,
        rng: &mut RngStream,
        n_layers: usize,
        kernel_size: usize,
    ) -> Result<Self> {
        if kernel_size % 2 == 0 {
            return Err(Error::config(format!(
                "kernel size must be odd, got {kernel_size}"
            )));
        }
        if n_layers == 0 {
            return Err(Error::config("need at least one conv layer".to_string()));
        }
        let k = kernel_size;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let row = set.add(format!("conv.l{l}.row"), glorot_uniform(1, k, rng));
            let col = set.add(format!("conv.l{l}.col"), glorot_uniform(k, 1, rng));
            let all = set.add(format!("conv.l{l}.all"), glorot_uniform(k, k, rng));
            layers.push(ConvKernelIds { row, col, all });
        }
        Ok(AsymConvParams {
            n_layers,
            kernel_size,
            layers,
        })
    }
}

/// Normalized sparse edge matrix plus the adjacency it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    pub e_s: Tensor2,
    pub a_s: Tensor2,
    pub xi: f64,
}

/// Saved intermediates for one conv layer: input, pre-activation, output.
#[derive(Debug, Clone)]
pub struct ConvLayerTrace {
    pub input: Tensor2,
    pub z: Tensor2,
    pub out: Tensor2,
}

/// Everything the backward pass needs from one sparsify forward.
#[derive(Debug, Clone)]
pub struct SparsifyTrace {
    pub conv_layers: Vec<ConvLayerTrace>,
    pub thresholded: Tensor2,
    pub zs_f: Tensor2,
    pub zs_denom: Vec<f64>,
    pub eps: f64,
}

/// Runs the conv stack and returns the final activation plus per-layer
/// traces. Output entries are sigmoid-bounded in (0,1).
pub fn asym_conv_block_traced(
    e: &Tensor2,
    params: &AsymConvParams,
    set: &ParamSet,
) -> Result<(Tensor2, Vec<ConvLayerTrace>)> {
    let mut traces = Vec::with_capacity(params.n_layers);
    let mut cur = e.clone();
    for ids in &params.layers {
        let h_row = conv2d_zeropad(&cur, set.value(ids.row))?;
        let h_col = conv2d_zeropad(&cur, set.value(ids.col))?;
        let h_all = conv2d_zeropad(&cur, set.value(ids.all))?;
        let mut z = h_row;
        z.add_scaled(&h_col, 1.0);
        z.add_scaled(&h_all, 1.0);
        let out = z.map(sigmoid_scalar);
        traces.push(ConvLayerTrace {
            input: cur,
            z,
            out: out.clone(),
        });
        cur = out;
    }
    Ok((cur, traces))
}

pub fn asym_conv_block(e: &Tensor2, params: &AsymConvParams, set: &ParamSet) -> Result<Tensor2> {
    Ok(asym_conv_block_traced(e, params, set)?.0)
}

/// Accumulates kernel gradients from upstream d(conv output); returns the
/// gradient w.r.t. the block input.
pub fn asym_conv_block_backward(
    traces: &[ConvLayerTrace],
    params: &AsymConvParams,
    set: &mut ParamSet,
    dout: &Tensor2,
) -> Tensor2 {
    let mut dcur = dout.clone();
    for (trace, ids) in traces.iter().zip(&params.layers).rev() {
        // sigmoid backward: dz = dout * s * (1 - s)
        let mut dz = Tensor2::zeros(dcur.rows(), dcur.cols());
        for (i, (&d, &s)) in dcur.data().iter().zip(trace.out.data()).enumerate() {
            dz.data_mut()[i] = d * s * (1.0 - s);
        }
        let mut dinput = Tensor2::zeros(trace.input.rows(), trace.input.cols());
        for id in [ids.row, ids.col, ids.all] {
            let (di, dk) = conv2d_zeropad_backward(&trace.input, set.value(id), &dz);
            dinput.add_scaled(&di, 1.0);
            set.grad_mut(id).add_scaled(&dk, 1.0);
        }
        dcur = dinput;
    }
    dcur
}

/// Keeps an entry iff it is >= xi, zero otherwise.
pub fn threshold_sparsify(h: &Tensor2, xi: f64) -> Result<Tensor2> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(Error::config(format!(
            "sparsity threshold must lie in [0,1], got {xi}"
        )));
    }
    Ok(h.map(|v| if v >= xi { v } else { 0.0 }))
}

/// Zero-preserving row normalization:
/// out_j = (exp(m_j)-1)^2 / (sum_k (exp(m_k)-1)^2 + eps).
/// Returns the output plus (f, denom) needed by the backward pass.
pub fn zero_softmax_rows_traced(m: &Tensor2, eps: f64) -> (Tensor2, Tensor2, Vec<f64>) {
    assert!(eps > 0.0, "eps must be positive");
    let (n, c) = (m.rows(), m.cols());
    let mut f = Tensor2::zeros(n, c);
    let mut denom = vec![0.0; n];
    for i in 0..n {
        let mut sum = 0.0;
        for j in 0..c {
            let v = m.at(i, j);
            let fij = if v == 0.0 {
                0.0
            } else {
                let t = v.exp() - 1.0;
                t * t
            };
            f.set(i, j, fij);
            sum += fij;
        }
        denom[i] = sum + eps;
    }
    let mut out = Tensor2::zeros(n, c);
    for i in 0..n {
        for j in 0..c {
            out.set(i, j, f.at(i, j) / denom[i]);
        }
    }
    (out, f, denom)
}

pub fn zero_softmax_rows(m: &Tensor2, eps: f64) -> Tensor2 {
    zero_softmax_rows_traced(m, eps).0
}

/// Backward of zero_softmax_rows: maps d(out) to d(m).
pub fn zero_softmax_rows_backward(
    m: &Tensor2,
    f: &Tensor2,
    denom: &[f64],
    dout: &Tensor2,
) -> Tensor2 {
    let (n, c) = (m.rows(), m.cols());
    let mut dm = Tensor2::zeros(n, c);
    for i in 0..n {
        let d = denom[i];
        let weighted: f64 = (0..c).map(|j| dout.at(i, j) * f.at(i, j)).sum();
        for j in 0..c {
            let mij = m.at(i, j);
            if mij == 0.0 {
                continue; // f == 0 and df/dm == 0 at m == 0
            }
            let e = mij.exp();
            let dfdm = 2.0 * (e - 1.0) * e;
            let df = dout.at(i, j) / d - weighted / (d * d);
            dm.set(i, j, df * dfdm);
        }
    }
    dm
}

/// A_s[i,j] = A[i,j] where E_s[i,j] > 0, else 0.
pub fn derive_sparse_adjacency(e_s: &Tensor2, a: &Tensor2) -> Tensor2 {
    debug_assert!(e_s.same_shape(a));
    let mut out = Tensor2::zeros(a.rows(), a.cols());
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            if e_s.at(i, j) > 0.0 {
                out.set(i, j, a.at(i, j));
            }
        }
    }
    out
}

/// Full sparse interaction pipeline with trace for backward.
pub fn sparsify_traced(
    graph: &BrainGraph,
    params: &AsymConvParams,
    set: &ParamSet,
    xi: f64,
    eps: f64,
) -> Result<(SparseGraph, SparsifyTrace)> {
    let (h, conv_layers) = asym_conv_block_traced(&graph.e, params, set)?;
    let thresholded = threshold_sparsify(&h, xi)?;
    let (e_s, zs_f, zs_denom) = zero_softmax_rows_traced(&thresholded, eps);
    let a_s = derive_sparse_adjacency(&e_s, &graph.a);
    Ok((
        SparseGraph { e_s, a_s, xi },
        SparsifyTrace {
            conv_layers,
            thresholded,
            zs_f,
            zs_denom,
            eps,
        },
    ))
}

pub fn sparsify(
    graph: &BrainGraph,
    params: &AsymConvParams,
    set: &ParamSet,
    xi: f64,
    eps: f64,
) -> Result<SparseGraph> {
    Ok(sparsify_traced(graph, params, set, xi, eps)?.0)
}

/// Accumulates kernel gradients from d(E_s). The threshold mask is treated
/// as locally constant; thresholded-away entries carry no gradient.
pub fn sparsify_backward(
    trace: &SparsifyTrace,
    params: &AsymConvParams,
    set: &mut ParamSet,
    d_e_s: &Tensor2,
) {
    let dm = zero_softmax_rows_backward(&trace.thresholded, &trace.zs_f, &trace.zs_denom, d_e_s);
    // threshold backward: pass-through on retained entries; retained entries
    // are exactly the nonzeros of `thresholded` (sigmoid output is never 0),
    // and zero_softmax_rows_backward already zeroed the rest.
    asym_conv_block_backward(&trace.conv_layers, params, set, &dm);
}
