//! Multimodal brain-graph construction from per-subject time series and
//! region feature tables.
//!
//! Edges fuse three pairwise metrics over regional time series: Pearson
//! correlation, Spearman rank correlation, and a Minkowski-distance-derived
//! similarity. The fused edge matrix is symmetric with a zero diagonal;
//! adjacency starts fully connected (all ones off the diagonal).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Per-subject N x K matrix of regional signals; row i is region i over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesMatrix {
    pub values: Tensor2,
}

impl TimeSeriesMatrix {
    pub fn new(values: Tensor2) -> Result<Self> {
        if values.cols() < 3 {
            return Err(Error::config(format!(
                "time series needs at least 3 time points, got {}",
                values.cols()
            )));
        }
        Ok(TimeSeriesMatrix { values })
    }

    pub fn n_regions(&self) -> usize {
        self.values.rows()
    }

    pub fn n_timepoints(&self) -> usize {
        self.values.cols()
    }
}

/// N x F table of precomputed per-region features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFeatureTable {
    pub values: Tensor2,
    pub feature_names: Vec<String>,
}

impl NodeFeatureTable {
    pub fn new(values: Tensor2, feature_names: Vec<String>) -> Result<Self> {
        if feature_names.len() != values.cols() {
            return Err(Error::validation(format!(
                "{} feature names for {} feature columns",
                feature_names.len(),
                values.cols()
            )));
        }
        Ok(NodeFeatureTable {
            values,
            feature_names,
        })
    }
}

/// Which pairwise metrics participate in edge fusion. All three by default;
/// subsets support the edge-feature ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricMask {
    pub pearson: bool,
    pub spearman: bool,
    pub minkowski: bool,
}

impl Default for MetricMask {
    fn default() -> Self {
        MetricMask {
            pearson: true,
            spearman: true,
            minkowski: true,
        }
    }
}

impl MetricMask {
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.pearson {
            parts.push("P");
        }
        if self.spearman {
            parts.push("S");
        }
        if self.minkowski {
            parts.push("M");
        }
        if parts.is_empty() {
            "none".to_string()
        } else {
            parts.join("&")
        }
    }
}

/// The pre-sparsification subject graph: node features X, fused edge matrix
/// E, binary adjacency A, optional class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrainGraph {
    pub x: Tensor2,
    pub e: Tensor2,
    pub a: Tensor2,
    pub label: Option<u8>,
}

impl BrainGraph {
    pub fn n_nodes(&self) -> usize {
        self.x.rows()
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }
}

fn mean(s: &[f64]) -> f64 {
    s.iter().sum::<f64>() / s.len() as f64
}

/// Pearson correlation of two equal-length series. Errors carry the argument
/// position (0 or 1) of a zero-variance series; callers with region context
/// remap it.
pub fn pearson(s_i: &[f64], s_j: &[f64]) -> Result<f64> {
    assert_eq!(s_i.len(), s_j.len(), "series lengths must match");
    assert!(s_i.len() >= 2, "pearson needs at least 2 points");
    let (mi, mj) = (mean(s_i), mean(s_j));
    let mut num = 0.0;
    let mut di2 = 0.0;
    let mut dj2 = 0.0;
    for k in 0..s_i.len() {
        let di = s_i[k] - mi;
        let dj = s_j[k] - mj;
        num += di * dj;
        di2 += di * di;
        dj2 += dj * dj;
    }
    if di2 == 0.0 {
        return Err(Error::DegenerateSeries { region: 0 });
    }
    if dj2 == 0.0 {
        return Err(Error::DegenerateSeries { region: 1 });
    }
    Ok(num / (di2.sqrt() * dj2.sqrt()))
}

/// Average ranks (1-based), ties get the mean of the tied positions.
pub fn average_ranks(s: &[f64]) -> Vec<f64> {
    let n = s.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[a].partial_cmp(&s[b]).expect("no NaN in series"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && s[order[j + 1]] == s[order[i]] {
            j += 1;
        }
        // positions i..=j are tied; average rank is the mean of (i+1)..=(j+1)
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn is_constant(s: &[f64]) -> bool {
    s.iter().all(|&v| v == s[0])
}

/// Spearman rank correlation via the rank-difference closed form
/// 1 - 6*sum(d^2)/(K(K^2-1)), with average ranks on ties.
pub fn spearman(s_i: &[f64], s_j: &[f64]) -> Result<f64> {
    assert_eq!(s_i.len(), s_j.len(), "series lengths must match");
    assert!(s_i.len() >= 3, "spearman needs at least 3 points");
    if is_constant(s_i) {
        return Err(Error::DegenerateSeries { region: 0 });
    }
    if is_constant(s_j) {
        return Err(Error::DegenerateSeries { region: 1 });
    }
    let ri = average_ranks(s_i);
    let rj = average_ranks(s_j);
    spearman_from_ranks(&ri, &rj)
}

fn spearman_from_ranks(ri: &[f64], rj: &[f64]) -> Result<f64> {
    let k = ri.len() as f64;
    let d2: f64 = ri
        .iter()
        .zip(rj.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(1.0 - 6.0 * d2 / (k * (k * k - 1.0)))
}

/// Minkowski distance (sum |a-b|^p)^(1/p); p defaults to 2 at call sites.
pub fn minkowski(s_i: &[f64], s_j: &[f64], p: f64) -> f64 {
    assert_eq!(s_i.len(), s_j.len(), "series lengths must match");
    assert!(p >= 1.0, "minkowski order must be >= 1");
    let sum: f64 = s_i
        .iter()
        .zip(s_j.iter())
        .map(|(a, b)| (a - b).abs().powf(p))
        .sum();
    sum.powf(1.0 / p)
}

/// Converts a symmetric nonnegative distance matrix into a similarity matrix
/// via 1 - D/max_offdiag(D). If every off-diagonal distance is zero the
/// off-diagonal similarities are all 1.
pub fn minkowski_to_similarity(d: &Tensor2) -> Result<Tensor2> {
    let n = d.rows();
    let mut max_off = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let v = d.at(i, j);
            if v < 0.0 {
                return Err(Error::InvalidDistance { row: i, col: j });
            }
            if i != j && v > max_off {
                max_off = v;
            }
        }
    }
    let mut out = Tensor2::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = if max_off == 0.0 {
                1.0
            } else {
                1.0 - d.at(i, j) / max_off
            };
            out.set(i, j, v);
        }
    }
    Ok(out)
}

/// Elementwise sum of the (already masked) metric matrices; diagonal forced
/// to zero, symmetry preserved.
pub fn fuse_edges(r: &Tensor2, rho: &Tensor2, msim: &Tensor2) -> Result<Tensor2> {
    if !r.same_shape(rho) {
        return Err(Error::ShapeMismatch {
            op: "fuse_edges",
            a_rows: r.rows(),
            a_cols: r.cols(),
            b_rows: rho.rows(),
            b_cols: rho.cols(),
        });
    }
    if !r.same_shape(msim) {
        return Err(Error::ShapeMismatch {
            op: "fuse_edges",
            a_rows: r.rows(),
            a_cols: r.cols(),
            b_rows: msim.rows(),
            b_cols: msim.cols(),
        });
    }
    let n = r.rows();
    let mut e = Tensor2::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            e.set(i, j, r.at(i, j) + rho.at(i, j) + msim.at(i, j));
        }
    }
    Ok(e)
}

fn validate_rows(ts: &TimeSeriesMatrix) -> Result<()> {
    for i in 0..ts.n_regions() {
        if is_constant(ts.values.row(i)) {
            return Err(Error::DegenerateSeries { region: i });
        }
    }
    Ok(())
}

/// All-pairs Pearson matrix with row statistics computed once.
pub fn pearson_matrix(ts: &TimeSeriesMatrix) -> Result<Tensor2> {
    validate_rows(ts)?;
    let n = ts.n_regions();
    let k = ts.n_timepoints();
    // center rows and precompute norms
    let mut centered = Tensor2::zeros(n, k);
    let mut norms = vec![0.0; n];
    for i in 0..n {
        let row = ts.values.row(i);
        let m = mean(row);
        let mut acc = 0.0;
        for t in 0..k {
            let d = row[t] - m;
            centered.set(i, t, d);
            acc += d * d;
        }
        norms[i] = acc.sqrt();
    }
    let mut out = Tensor2::identity(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dot: f64 = centered
                .row(i)
                .iter()
                .zip(centered.row(j))
                .map(|(a, b)| a * b)
                .sum();
            let r = dot / (norms[i] * norms[j]);
            out.set(i, j, r);
            out.set(j, i, r);
        }
    }
    Ok(out)
}

/// All-pairs Spearman matrix with per-row ranks computed once.
pub fn spearman_matrix(ts: &TimeSeriesMatrix) -> Result<Tensor2> {
    validate_rows(ts)?;
    let n = ts.n_regions();
    let ranks: Vec<Vec<f64>> = (0..n).map(|i| average_ranks(ts.values.row(i))).collect();
    let mut out = Tensor2::identity(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = spearman_from_ranks(&ranks[i], &ranks[j])?;
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    Ok(out)
}

/// All-pairs Minkowski distance matrix.
pub fn minkowski_matrix(ts: &TimeSeriesMatrix, p: f64) -> Tensor2 {
    let n = ts.n_regions();
    let mut out = Tensor2::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = minkowski(ts.values.row(i), ts.values.row(j), p);
            out.set(i, j, d);
            out.set(j, i, d);
        }
    }
    out
}

/// Builds the fused multimodal graph from time series and node features,
/// using the metrics selected in `mask` (all three by default).
pub fn build_graph_masked(
    ts: &TimeSeriesMatrix,
    nodes: &NodeFeatureTable,
    label: Option<u8>,
    mask: MetricMask,
) -> Result<BrainGraph> {
    if ts.n_regions() != nodes.values.rows() {
        return Err(Error::ShapeMismatch {
            op: "build_graph",
            a_rows: ts.n_regions(),
            a_cols: ts.n_timepoints(),
            b_rows: nodes.values.rows(),
            b_cols: nodes.values.cols(),
        });
    }
    let n = ts.n_regions();
    let zero = Tensor2::zeros(n, n);
    let r = if mask.pearson {
        pearson_matrix(ts)?
    } else {
        zero.clone()
    };
    let rho = if mask.spearman {
        spearman_matrix(ts)?
    } else {
        zero.clone()
    };
    let msim = if mask.minkowski {
        minkowski_to_similarity(&minkowski_matrix(ts, 2.0))?
    } else {
        zero
    };
    let e = fuse_edges(&r, &rho, &msim)?;
    let mut a = Tensor2::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                a.set(i, j, 1.0);
            }
        }
    }
    Ok(BrainGraph {
        x: nodes.values.clone(),
        e,
        a,
        label,
    })
}

pub fn build_graph(
    ts: &TimeSeriesMatrix,
    nodes: &NodeFeatureTable,
    label: Option<u8>,
) -> Result<BrainGraph> {
    build_graph_masked(ts, nodes, label, MetricMask::default())
}
