//! Focal-loss training, stratified k-fold evaluation, classification
//! metrics, and the ablation sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gat::{backward, forward, ModelArch, ModelConfig};
use crate::graph::BrainGraph;
use crate::optim::{AdamConfig, AdamState};
use crate::param::ParamSet;
use crate::rng::RngStream;

pub const PROB_CLAMP: f64 = 1e-7;

fn default_lr() -> f64 {
    0.001
}
fn default_batch() -> usize {
    32
}
fn default_epochs() -> usize {
    150
}
fn default_alpha() -> f64 {
    0.25
}
fn default_gamma() -> f64 {
    2.0
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_folds() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_alpha")]
    pub focal_alpha: f64,
    #[serde(default = "default_gamma")]
    pub focal_gamma: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            focal_alpha: default_alpha(),
            focal_gamma: default_gamma(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            folds: default_folds(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.focal_alpha) {
            return Err(Error::config("focal alpha must lie in [0,1]"));
        }
        if self.focal_gamma < 0.0 {
            return Err(Error::config("focal gamma must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        if self.folds < 2 {
            return Err(Error::config("need at least 2 folds"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Mean binary focal loss over a batch; `p` holds predicted positive-class
/// probabilities, `y` the 0/1 labels.
pub fn focal_loss(p: &[f64], y: &[u8], alpha: f64, gamma: f64) -> Result<f64> {
    if p.is_empty() || p.len() != y.len() {
        return Err(Error::config("focal loss needs a nonempty matched batch"));
    }
    let mut sum = 0.0;
    for (&pi, &yi) in p.iter().zip(y) {
        let pc = clamp_prob(pi);
        sum += if yi == 1 {
            -alpha * (1.0 - pc).powf(gamma) * pc.ln()
        } else {
            -(1.0 - alpha) * pc.powf(gamma) * (1.0 - pc).ln()
        };
    }
    Ok(sum / p.len() as f64)
}

/// d(mean focal loss)/dp_i for each sample, including the 1/N factor.
/// Samples at the clamp boundary get zero gradient.
pub fn focal_loss_grad_p(p: &[f64], y: &[u8], alpha: f64, gamma: f64) -> Vec<f64> {
    let n = p.len() as f64;
    p.iter()
        .zip(y)
        .map(|(&pi, &yi)| {
            if pi <= PROB_CLAMP || pi >= 1.0 - PROB_CLAMP {
                return 0.0;
            }
            let d = if yi == 1 {
                // -alpha * d/dp [(1-p)^g ln p]
                -alpha * ((1.0 - pi).powf(gamma) / pi
                    - gamma * (1.0 - pi).powf(gamma - 1.0) * pi.ln())
            } else {
                // -(1-alpha) * d/dp [p^g ln(1-p)]
                -(1.0 - alpha)
                    * (gamma * pi.powf(gamma - 1.0) * (1.0 - pi).ln()
                        - pi.powf(gamma) / (1.0 - pi))
            };
            d / n
        })
        .collect()
}

/// Confusion-matrix counts and the derived scores; undefined ratios are 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub acc: f64,
    pub sen: f64,
    pub spe: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Thresholds predicted positive probability at 0.5 and derives
/// ACC/SEN/SPE/F1 from the confusion counts.
pub fn compute_metrics(p_positive: &[f64], labels: &[u8]) -> Metrics {
    assert_eq!(p_positive.len(), labels.len());
    assert!(!labels.is_empty());
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in p_positive.iter().zip(labels) {
        let pred = if p >= 0.5 { 1 } else { 0 };
        match (pred, y) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 0) => tn += 1,
            (0, 1) => fn_ += 1,
            _ => unreachable!(),
        }
    }
    let acc = ratio(tp + tn, tp + fp + tn + fn_);
    let sen = ratio(tp, tp + fn_);
    let spe = ratio(tn, tn + fp);
    let prec = ratio(tp, tp + fp);
    let f1 = if prec + sen == 0.0 {
        0.0
    } else {
        2.0 * prec * sen / (prec + sen)
    };
    Metrics {
        tp,
        fp,
        tn,
        fn_,
        acc,
        sen,
        spe,
        f1,
    }
}

/// One cross-validation fold's held-out metrics and training loss trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub metrics: Metrics,
    pub loss_trace: Vec<f64>,
}

/// Mean and std (over folds) per metric, matching the usual "mean +- std"
/// reporting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvSummary {
    pub folds: Vec<FoldResult>,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub sen_mean: f64,
    pub sen_std: f64,
    pub spe_mean: f64,
    pub spe_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl CvSummary {
    fn from_folds(folds: Vec<FoldResult>) -> Self {
        let accs: Vec<f64> = folds.iter().map(|f| f.metrics.acc).collect();
        let sens: Vec<f64> = folds.iter().map(|f| f.metrics.sen).collect();
        let spes: Vec<f64> = folds.iter().map(|f| f.metrics.spe).collect();
        let f1s: Vec<f64> = folds.iter().map(|f| f.metrics.f1).collect();
        let (acc_mean, acc_std) = mean_std(&accs);
        let (sen_mean, sen_std) = mean_std(&sens);
        let (spe_mean, spe_std) = mean_std(&spes);
        let (f1_mean, f1_std) = mean_std(&f1s);
        CvSummary {
            folds,
            acc_mean,
            acc_std,
            sen_mean,
            sen_std,
            spe_mean,
            spe_std,
            f1_mean,
            f1_std,
        }
    }
}

/// Per-feature z-score statistics fitted on a training split and persisted
/// with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNorm {
    pub fn fit(graphs: &[&BrainGraph]) -> FeatureNorm {
        let f = graphs[0].n_features();
        let total: usize = graphs.iter().map(|g| g.n_nodes()).sum();
        let mut mean = vec![0.0; f];
        for g in graphs {
            for i in 0..g.n_nodes() {
                for (m, &v) in mean.iter_mut().zip(g.x.row(i)) {
                    *m += v;
                }
            }
        }
        for m in &mut mean {
            *m /= total as f64;
        }
        let mut var = vec![0.0; f];
        for g in graphs {
            for i in 0..g.n_nodes() {
                for (c, (&v, &m)) in g.x.row(i).iter().zip(&mean).enumerate() {
                    var[c] += (v - m) * (v - m);
                }
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / total as f64).sqrt();
                if s == 0.0 {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        FeatureNorm { mean, std }
    }

    pub fn apply(&self, g: &BrainGraph) -> BrainGraph {
        let mut x = g.x.clone();
        for i in 0..x.rows() {
            for c in 0..x.cols() {
                x.set(i, c, (x.at(i, c) - self.mean[c]) / self.std[c]);
            }
        }
        BrainGraph {
            x,
            e: g.e.clone(),
            a: g.a.clone(),
            label: g.label,
        }
    }
}

/// A trained model: parameter values, architecture handles, and the feature
/// normalization fitted on its training split.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub set: ParamSet,
    pub arch: ModelArch,
    pub norm: FeatureNorm,
}

impl TrainedModel {
    pub fn predict(&self, graph: &BrainGraph) -> Result<[f64; 2]> {
        let g = self.norm.apply(graph);
        Ok(forward(&g, &self.arch, &self.set)?.probs)
    }
}

fn require_label(g: &BrainGraph) -> Result<u8> {
    g.label
        .ok_or_else(|| Error::validation("graph is missing its class label".to_string()))
}

/// Trains from fresh glorot initialization on `graphs`. Shuffles per epoch
/// with the given stream, runs Adam on mini-batches of `batch_size` (final
/// partial batch kept), and returns the model plus the per-epoch mean loss.
pub fn train_model(
    graphs: &[BrainGraph],
    cfg: &TrainConfig,
    mcfg: &ModelConfig,
    rng: &mut RngStream,
) -> Result<(TrainedModel, Vec<f64>)> {
    cfg.validate()?;
    mcfg.validate()?;
    if graphs.is_empty() {
        return Err(Error::config("empty training set"));
    }
    let labels: Vec<u8> = graphs.iter().map(require_label).collect::<Result<_>>()?;
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(Error::config(
            "training set contains a single class; need both labels",
        ));
    }

    let norm = FeatureNorm::fit(&graphs.iter().collect::<Vec<_>>());
    let normalized: Vec<BrainGraph> = graphs.iter().map(|g| norm.apply(g)).collect();

    let mut set = ParamSet::new();
    let mut init_rng = rng.derive(0x11);
    let arch = ModelArch::init(&mut set, mcfg, graphs[0].n_features(), &mut init_rng)?;
    let mut adam = AdamState::new(&set);
    let adam_cfg = cfg.adam();
    let mut shuffle_rng = rng.derive(0x22);

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..normalized.len()).collect();
    for _epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut batch_losses = Vec::new();
        for batch in order.chunks(cfg.batch_size) {
            set.zero_grads();
            let mut probs = Vec::with_capacity(batch.len());
            let mut ys = Vec::with_capacity(batch.len());
            let mut traces = Vec::with_capacity(batch.len());
            for &idx in batch {
                let trace = forward(&normalized[idx], &arch, &set)?;
                probs.push(trace.probs[1]);
                ys.push(labels[idx]);
                traces.push(trace);
            }
            let loss = focal_loss(&probs, &ys, cfg.focal_alpha, cfg.focal_gamma)?;
            let dps = focal_loss_grad_p(&probs, &ys, cfg.focal_alpha, cfg.focal_gamma);
            for ((&idx, trace), dp) in batch.iter().zip(&traces).zip(dps) {
                // p1 = softmax(logits)[1]: dp/dz1 = p1(1-p1), dp/dz0 = -p1(1-p1)
                let p1 = trace.probs[1];
                let dz = dp * p1 * (1.0 - p1);
                backward(&normalized[idx], &arch, &mut set, trace, [-dz, dz]);
            }
            adam.step(&mut set, &adam_cfg);
            batch_losses.push(loss);
        }
        let (epoch_mean, _) = mean_std(&batch_losses);
        epoch_losses.push(epoch_mean);
    }

    Ok((TrainedModel { set, arch, norm }, epoch_losses))
}

/// Evaluates a trained model on held-out graphs.
pub fn evaluate(model: &TrainedModel, graphs: &[BrainGraph]) -> Result<Metrics> {
    let mut probs = Vec::with_capacity(graphs.len());
    let mut ys = Vec::with_capacity(graphs.len());
    for g in graphs {
        probs.push(model.predict(g)?[1]);
        ys.push(require_label(g)?);
    }
    Ok(compute_metrics(&probs, &ys))
}

/// Stratified split: per class, a seeded shuffle dealt round-robin into
/// `folds` bins. Returns test-index lists, one per fold.
pub fn stratified_folds(labels: &[u8], folds: usize, rng: &mut RngStream) -> Result<Vec<Vec<usize>>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y as usize].push(i);
    }
    for (y, idxs) in by_class.iter().enumerate() {
        if !idxs.is_empty() && idxs.len() < folds {
            return Err(Error::config(format!(
                "class {y} has {} subjects, fewer than {folds} folds",
                idxs.len()
            )));
        }
    }
    let mut out = vec![Vec::new(); folds];
    for idxs in &mut by_class {
        rng.shuffle(idxs);
        for (k, &i) in idxs.iter().enumerate() {
            out[k % folds].push(i);
        }
    }
    for fold in &mut out {
        fold.sort_unstable();
    }
    Ok(out)
}

/// Stratified k-fold cross-validation. Folds run in parallel, each from a
/// fresh initialization seeded by its fold index, and are aggregated in fold
/// order for determinism.
pub fn kfold_cv(
    graphs: &[BrainGraph],
    cfg: &TrainConfig,
    mcfg: &ModelConfig,
    rng: &RngStream,
) -> Result<CvSummary> {
    cfg.validate()?;
    let labels: Vec<u8> = graphs.iter().map(require_label).collect::<Result<_>>()?;
    let mut split_rng = rng.derive(0xF01D);
    let test_folds = stratified_folds(&labels, cfg.folds, &mut split_rng)?;

    let results: Vec<Result<FoldResult>> = test_folds
        .par_iter()
        .enumerate()
        .map(|(k, test_idx)| {
            let test_set: Vec<BrainGraph> = test_idx.iter().map(|&i| graphs[i].clone()).collect();
            let train_set: Vec<BrainGraph> = (0..graphs.len())
                .filter(|i| !test_idx.contains(i))
                .map(|i| graphs[i].clone())
                .collect();
            let mut fold_rng = rng.derive(0x100 + k as u64);
            let (model, loss_trace) = train_model(&train_set, cfg, mcfg, &mut fold_rng)?;
            let metrics = evaluate(&model, &test_set)?;
            Ok(FoldResult {
                fold: k,
                metrics,
                loss_trace,
            })
        })
        .collect();

    let folds: Vec<FoldResult> = results.into_iter().collect::<Result<_>>()?;
    Ok(CvSummary::from_folds(folds))
}

/// One point of the ablation grid: named overrides on top of the base model
/// configuration. `metric_mask` requires re-building graphs and is handled
/// by the caller (see `data::ablation_sweep`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationPoint {
    pub name: String,
    #[serde(default)]
    pub xi: Option<f64>,
    #[serde(default)]
    pub heads: Option<usize>,
    #[serde(default)]
    pub edge_features_enabled: Option<bool>,
    #[serde(default)]
    pub metric_mask: Option<crate::graph::MetricMask>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub sen_mean: f64,
    pub sen_std: f64,
    pub spe_mean: f64,
    pub spe_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
}

impl AblationRow {
    pub fn from_summary(name: &str, s: &CvSummary) -> Self {
        AblationRow {
            name: name.to_string(),
            acc_mean: s.acc_mean,
            acc_std: s.acc_std,
            sen_mean: s.sen_mean,
            sen_std: s.sen_std,
            spe_mean: s.spe_mean,
            spe_std: s.spe_std,
            f1_mean: s.f1_mean,
            f1_std: s.f1_std,
        }
    }
}

impl AblationPoint {
    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        let mut cfg = base.clone();
        if let Some(xi) = self.xi {
            cfg.xi = xi;
        }
        if let Some(t) = self.heads {
            cfg.heads = t;
        }
        if let Some(e) = self.edge_features_enabled {
            cfg.edge_features_enabled = e;
        }
        cfg
    }
}

/// The published grids: xi in {0,0.3,0.5,0.7,1}, T in 1..=5, edge flag.
pub fn default_ablation_grid() -> Vec<AblationPoint> {
    let mut grid = Vec::new();
    for xi in [0.0, 0.3, 0.5, 0.7, 1.0] {
        grid.push(AblationPoint {
            name: format!("xi={xi}"),
            xi: Some(xi),
            heads: None,
            edge_features_enabled: None,
            metric_mask: None,
        });
    }
    for t in 1..=5usize {
        grid.push(AblationPoint {
            name: format!("T={t}"),
            xi: None,
            heads: Some(t),
            edge_features_enabled: None,
            metric_mask: None,
        });
    }
    for edges in [true, false] {
        grid.push(AblationPoint {
            name: format!("edges={edges}"),
            xi: None,
            heads: None,
            edge_features_enabled: Some(edges),
            metric_mask: None,
        });
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor2;

    #[test]
    fn focal_perfect_prediction_vanishes() {
        let loss = focal_loss(&[1.0 - 1e-9], &[1], 0.25, 2.0).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn focal_reduces_to_half_bce() {
        // gamma=0, alpha=0.5 is exactly 0.5 * BCE
        let loss = focal_loss(&[0.5], &[1], 0.5, 0.0).unwrap();
        assert!((loss - 0.5 * 2.0f64.ln()).abs() < 1e-12);

        let mut rng = RngStream::new(12);
        let p: Vec<f64> = (0..64).map(|_| rng.uniform() * 0.98 + 0.01).collect();
        let y: Vec<u8> = (0..64).map(|_| (rng.uniform() < 0.5) as u8).collect();
        let fl = focal_loss(&p, &y, 0.5, 0.0).unwrap();
        let bce: f64 = p
            .iter()
            .zip(&y)
            .map(|(&pi, &yi)| {
                if yi == 1 {
                    -pi.ln()
                } else {
                    -(1.0 - pi).ln()
                }
            })
            .sum::<f64>()
            / 64.0;
        assert!((fl - 0.5 * bce).abs() < 1e-12);
    }

    #[test]
    fn focal_formula_oracle() {
        // gamma=2, alpha=0.25, y=1, p=0.5: 0.25 * 0.25 * ln 2
        let loss = focal_loss(&[0.5], &[1], 0.25, 2.0).unwrap();
        assert!((loss - 0.25 * 0.25 * 2.0f64.ln()).abs() < 1e-12);
        assert!((loss - 0.043321698784980495).abs() < 1e-12);
    }

    #[test]
    fn focal_empty_batch_rejected() {
        assert!(focal_loss(&[], &[], 0.25, 2.0).is_err());
    }

    #[test]
    fn focal_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(19);
        for _ in 0..50 {
            let p: Vec<f64> = (0..4).map(|_| rng.uniform() * 0.9 + 0.05).collect();
            let y: Vec<u8> = (0..4).map(|_| (rng.uniform() < 0.5) as u8).collect();
            let grads = focal_loss_grad_p(&p, &y, 0.25, 2.0);
            for i in 0..4 {
                let h = 1e-6;
                let mut pp = p.clone();
                pp[i] += h;
                let fp = focal_loss(&pp, &y, 0.25, 2.0).unwrap();
                pp[i] -= 2.0 * h;
                let fm = focal_loss(&pp, &y, 0.25, 2.0).unwrap();
                let numeric = (fp - fm) / (2.0 * h);
                assert!(
                    (grads[i] - numeric).abs() / numeric.abs().max(1e-8) < 1e-4,
                    "grad {} vs numeric {}",
                    grads[i],
                    numeric
                );
            }
        }
    }

    #[test]
    fn metrics_all_correct() {
        let m = compute_metrics(&[0.9, 0.1, 0.8, 0.2], &[1, 0, 1, 0]);
        assert_eq!((m.acc, m.sen, m.spe, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn metrics_degenerate_divisions_are_zero() {
        let m = compute_metrics(&[0.1, 0.2], &[0, 0]);
        assert_eq!(m.acc, 1.0);
        assert_eq!(m.spe, 1.0);
        assert_eq!(m.sen, 0.0);
        assert_eq!(m.f1, 0.0);
    }

    #[test]
    fn metrics_hand_confusion_matrix() {
        // tp=4, fn=1, tn=3, fp=2
        let p = [0.9, 0.9, 0.9, 0.9, 0.1, 0.1, 0.1, 0.1, 0.9, 0.9];
        let y = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
        let m = compute_metrics(&p, &y);
        assert_eq!((m.tp, m.fn_, m.tn, m.fp), (4, 1, 3, 2));
        assert!((m.acc - 0.7).abs() < 1e-12);
        assert!((m.sen - 0.8).abs() < 1e-12);
        assert!((m.spe - 0.6).abs() < 1e-12);
        assert!((m.f1 - 2.0 * (4.0 / 6.0) * 0.8 / (4.0 / 6.0 + 0.8)).abs() < 1e-12);
    }

    #[test]
    fn metrics_accuracy_decomposition() {
        let mut rng = RngStream::new(33);
        for _ in 0..100 {
            let n = 2 + rng.gen_usize(30);
            let p: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let y: Vec<u8> = (0..n).map(|_| (rng.uniform() < 0.5) as u8).collect();
            let m = compute_metrics(&p, &y);
            let pos = y.iter().filter(|&&v| v == 1).count() as f64;
            let neg = n as f64 - pos;
            let lhs = m.acc * (pos + neg);
            let rhs = m.sen * pos + m.spe * neg;
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn stratified_folds_partition_and_balance() {
        let mut rng = RngStream::new(40);
        let labels: Vec<u8> = (0..37).map(|i| (i % 3 == 0) as u8).collect();
        let folds = stratified_folds(&labels, 5, &mut rng).unwrap();
        let mut all: Vec<usize> = folds.iter().flatten().cloned().collect();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
        // class ratio within 1 subject of the global split
        for y in [0u8, 1u8] {
            let counts: Vec<usize> = folds
                .iter()
                .map(|f| f.iter().filter(|&&i| labels[i] == y).count())
                .collect();
            let min = counts.iter().min().unwrap();
            let max = counts.iter().max().unwrap();
            assert!(max - min <= 1, "class {y}: {counts:?}");
        }
    }

    #[test]
    fn stratified_folds_insufficient_class_rejected() {
        let labels = vec![0, 0, 0, 0, 0, 1, 1];
        let mut rng = RngStream::new(41);
        assert!(stratified_folds(&labels, 5, &mut rng).is_err());
    }

    fn tiny_graph(x0: f64, label: u8) -> BrainGraph {
        let n = 3;
        let mut x = Tensor2::zeros(n, 2);
        for i in 0..n {
            x.set(i, 0, x0 + i as f64 * 0.1);
            x.set(i, 1, -x0);
        }
        let mut e = Tensor2::zeros(n, n);
        let mut a = Tensor2::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    e.set(i, j, 0.5);
                    a.set(i, j, 1.0);
                }
            }
        }
        BrainGraph {
            x,
            e,
            a,
            label: Some(label),
        }
    }

    #[test]
    fn train_zero_epochs_returns_initialization() {
        let graphs = vec![tiny_graph(1.0, 1), tiny_graph(-1.0, 0)];
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let mcfg = ModelConfig {
            hidden_dims: vec![4],
            sparse_interaction_enabled: false,
            ..Default::default()
        };
        let mut rng = RngStream::new(50);
        let (model, trace) = train_model(&graphs, &cfg, &mcfg, &mut rng).unwrap();
        assert!(trace.is_empty());

        // same init seed path without training
        let mut set = ParamSet::new();
        let mut rng2 = RngStream::new(50).derive(0x11);
        let arch2 = ModelArch::init(&mut set, &mcfg, 2, &mut rng2).unwrap();
        assert_eq!(model.set.value(arch2.fc_w), set.value(model.arch.fc_w));
    }

    #[test]
    fn train_single_class_rejected() {
        let graphs = vec![tiny_graph(1.0, 1), tiny_graph(0.5, 1)];
        let mut rng = RngStream::new(51);
        assert!(matches!(
            train_model(&graphs, &TrainConfig::default(), &ModelConfig::default(), &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn one_subject_one_epoch_takes_one_adam_step() {
        // two subjects, batch 32, one epoch: a single batch, a single step;
        // parameters must move away from init
        let graphs = vec![tiny_graph(1.0, 1), tiny_graph(-1.0, 0)];
        let cfg = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        let mcfg = ModelConfig {
            hidden_dims: vec![4],
            sparse_interaction_enabled: false,
            ..Default::default()
        };
        let mut rng = RngStream::new(52);
        let (model, trace) = train_model(&graphs, &cfg, &mcfg, &mut rng).unwrap();
        assert_eq!(trace.len(), 1);
        let mut set = ParamSet::new();
        let mut rng2 = RngStream::new(52).derive(0x11);
        let arch2 = ModelArch::init(&mut set, &mcfg, 2, &mut rng2).unwrap();
        assert_ne!(model.set.value(arch2.fc_w), set.value(model.arch.fc_w));
    }

    #[test]
    fn separable_toy_set_converges() {
        let graphs = vec![tiny_graph(1.5, 1), tiny_graph(-1.5, 0)];
        let cfg = TrainConfig {
            epochs: 200,
            learning_rate: 0.01,
            ..Default::default()
        };
        let mcfg = ModelConfig {
            hidden_dims: vec![8, 8],
            heads: 2,
            sparse_interaction_enabled: false,
            ..Default::default()
        };
        let mut rng = RngStream::new(53);
        let (_, trace) = train_model(&graphs, &cfg, &mcfg, &mut rng).unwrap();
        let final_loss = *trace.last().unwrap();
        assert!(final_loss < 0.01, "final loss {final_loss}");
    }

    #[test]
    fn ablation_grid_shape() {
        let grid = default_ablation_grid();
        assert_eq!(grid.iter().filter(|p| p.xi.is_some()).count(), 5);
        assert_eq!(grid.iter().filter(|p| p.heads.is_some()).count(), 5);
    }
}
