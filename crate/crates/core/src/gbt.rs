//! Histogram-based gradient-boosted decision trees.
//!
//! Features are discretized into at most `n_bins` quantile bins. Trees grow
//! best-first on gradient/hessian histograms; binary problems use the
//! logistic loss with one tree per iteration, multiclass problems the
//! softmax loss with one tree per class per iteration.
//!
//! Gradient, hessian and weight sums are accumulated as 128-bit fixed-point
//! integers. Sums are therefore exact and order-independent, which makes
//! sibling histograms obtainable by subtraction and makes integer sample
//! weights equivalent to duplicated rows.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::container::{Container, Tensor};
use crate::error::{Error, Result};

pub const MODEL_KIND: &str = "gbt";
pub const MODEL_VERSION: u32 = 1;

const FIXED_ONE: f64 = 18446744073709551616.0; // 2^64

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Logistic,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbtConfig {
    pub max_iter: usize,
    pub max_depth: usize,
    pub max_leaf_nodes: usize,
    /// Minimum total sample weight in a leaf.
    pub min_samples_leaf: f64,
    pub learning_rate: f64,
    pub l2_regularization: f64,
    pub n_bins: usize,
    pub loss: Loss,
}

impl GbtConfig {
    /// Tuned defaults for the binary fault detector.
    pub fn detector() -> Self {
        GbtConfig {
            max_iter: 88,
            max_depth: 6,
            max_leaf_nodes: 23,
            min_samples_leaf: 16.0,
            learning_rate: 0.05,
            l2_regularization: 0.0,
            n_bins: 255,
            loss: Loss::Logistic,
        }
    }

    /// Tuned defaults for the multiclass fault diagnoser.
    pub fn diagnoser() -> Self {
        GbtConfig {
            max_iter: 105,
            max_depth: 9,
            max_leaf_nodes: 50,
            min_samples_leaf: 21.0,
            learning_rate: 0.21,
            l2_regularization: 0.0,
            n_bins: 255,
            loss: Loss::Softmax,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || self.max_depth == 0 || self.max_leaf_nodes < 2 {
            return Err(Error::Config("gbt: max_iter and max_depth must be positive, max_leaf_nodes ≥ 2".into()));
        }
        if !(self.min_samples_leaf > 0.0) || !(self.learning_rate > 0.0) || !(self.l2_regularization >= 0.0) {
            return Err(Error::Config("gbt: min_samples_leaf and learning_rate must be positive, l2 ≥ 0".into()));
        }
        if !(2..=256).contains(&self.n_bins) {
            return Err(Error::Config("gbt: n_bins must lie in [2, 256]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// `None` marks a leaf.
    pub feature: Option<usize>,
    /// Samples with `x[feature] <= threshold` go left.
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            match n.feature {
                None => return n.value,
                Some(f) => i = if row[f] <= n.threshold { n.left } else { n.right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.feature.is_none()).count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i].feature {
                None => 0,
                Some(_) => 1 + go(t, t.nodes[i].left).max(go(t, t.nodes[i].right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtEnsemble {
    pub config: GbtConfig,
    /// Original labels in score-column order.
    pub classes: Vec<u32>,
    pub n_features: usize,
    pub bin_edges: Vec<Vec<f64>>,
    /// Initial margin per tree group (one value for logistic, K for softmax).
    pub base_scores: Vec<f64>,
    /// `trees[iteration * groups + group]`.
    pub trees: Vec<Tree>,
    /// Weighted mean training loss after each iteration.
    pub training_loss: Vec<f64>,
}

/// Bin edges of one feature: midpoints between distinct values when there
/// are few of them, otherwise midpoint-interpolated quantiles.
pub fn bin_edges(values: &[f64], n_bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    let mut edges: Vec<f64> = if distinct.len() <= n_bins {
        distinct.windows(2).map(|w| midpoint(w[0], w[1])).collect()
    } else {
        let n = sorted.len();
        (1..n_bins)
            .map(|i| {
                let pos = i as f64 / n_bins as f64 * (n - 1) as f64;
                let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
                midpoint(sorted[lo], sorted[hi])
            })
            .collect()
    };
    edges.dedup();
    edges
}

fn midpoint(a: f64, b: f64) -> f64 {
    a + (b - a) / 2.0
}

/// Bin index of `x`: the number of edges strictly below it.
pub fn bin_of(edges: &[f64], x: f64) -> usize {
    edges.partition_point(|&e| e < x)
}

fn fixed(v: f64) -> i128 {
    (v * FIXED_ONE).round() as i128
}

fn unfixed(v: i128) -> f64 {
    v as f64 / FIXED_ONE
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Stats {
    g: i128,
    h: i128,
    w: i128,
}

impl std::ops::AddAssign for Stats {
    fn add_assign(&mut self, o: Stats) {
        self.g += o.g;
        self.h += o.h;
        self.w += o.w;
    }
}

impl std::ops::Sub for Stats {
    type Output = Stats;
    fn sub(self, o: Stats) -> Stats {
        Stats { g: self.g - o.g, h: self.h - o.h, w: self.w - o.w }
    }
}

/// Per-sample weight in the form used for exact accumulation.
#[derive(Debug, Clone, Copy)]
enum Weight {
    Integer(i128),
    Real(f64),
}

impl Weight {
    fn new(w: f64) -> Self {
        if w.fract() == 0.0 && w.abs() < 1e15 {
            Weight::Integer(w as i128)
        } else {
            Weight::Real(w)
        }
    }

    fn apply(self, v: f64) -> i128 {
        match self {
            Weight::Integer(k) => fixed(v) * k,
            Weight::Real(w) => fixed(v * w),
        }
    }
}

type Histogram = Vec<Vec<Stats>>;

struct SplitCandidate {
    gain: f64,
    feature: usize,
    bin: usize,
    left: Stats,
}

struct Grower<'a> {
    cfg: &'a GbtConfig,
    binned: &'a [Vec<u8>],
    n_bins: &'a [usize],
    weights: &'a [Weight],
    min_leaf: i128,
}

struct OpenLeaf {
    node: usize,
    depth: usize,
    samples: Vec<usize>,
    stats: Stats,
    hist: Histogram,
    split: Option<SplitCandidate>,
}

impl Grower<'_> {
    fn histogram(&self, samples: &[usize], grad: &[i128], hess: &[i128]) -> Histogram {
        self.binned
            .par_iter()
            .zip(self.n_bins)
            .map(|(col, &nb)| {
                let mut h = vec![Stats::default(); nb];
                for &i in samples {
                    let s = &mut h[col[i] as usize];
                    s.g += grad[i];
                    s.h += hess[i];
                    s.w += self.weights_fixed(i);
                }
                h
            })
            .collect()
    }

    fn weights_fixed(&self, i: usize) -> i128 {
        self.weights[i].apply(1.0)
    }

    fn score(&self, s: Stats) -> f64 {
        let g = unfixed(s.g);
        let denom = unfixed(s.h) + self.cfg.l2_regularization;
        if denom > 0.0 {
            g * g / denom
        } else {
            0.0
        }
    }

    fn leaf_value(&self, s: Stats) -> f64 {
        let denom = unfixed(s.h) + self.cfg.l2_regularization;
        if denom > 0.0 {
            -unfixed(s.g) / denom * self.cfg.learning_rate
        } else {
            0.0
        }
    }

    fn best_split(&self, hist: &Histogram, total: Stats) -> Option<SplitCandidate> {
        if total.w < 2 * self.min_leaf {
            return None;
        }
        let parent = self.score(total);
        let mut best: Option<SplitCandidate> = None;
        for (feature, h) in hist.iter().enumerate() {
            let mut left = Stats::default();
            for (bin, s) in h.iter().enumerate().take(h.len().saturating_sub(1)) {
                left += *s;
                let right = total - left;
                if left.w < self.min_leaf || right.w < self.min_leaf {
                    continue;
                }
                let gain = self.score(left) + self.score(right) - parent;
                if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(SplitCandidate { gain, feature, bin, left });
                }
            }
        }
        best
    }

    fn open(&self, node: usize, depth: usize, samples: Vec<usize>, stats: Stats, hist: Histogram) -> OpenLeaf {
        let split = if depth < self.cfg.max_depth { self.best_split(&hist, stats) } else { None };
        OpenLeaf { node, depth, samples, stats, hist, split }
    }

    fn grow(&self, grad: &[i128], hess: &[i128], samples: Vec<usize>, edges: &[Vec<f64>]) -> (Tree, Vec<(usize, f64)>) {
        let hist = self.histogram(&samples, grad, hess);
        let mut stats = Stats::default();
        for s in &hist[0] {
            stats += *s;
        }
        let mut nodes = vec![Node { feature: None, threshold: 0.0, left: 0, right: 0, value: 0.0 }];
        let mut open = vec![self.open(0, 0, samples, stats, hist)];
        let mut n_leaves = 1;
        while n_leaves < self.cfg.max_leaf_nodes {
            // Highest gain wins; ties go to the earliest node.
            let pick = open
                .iter()
                .enumerate()
                .filter_map(|(i, l)| l.split.as_ref().map(|s| (i, s.gain, l.node)))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.2.cmp(&a.2)));
            let Some((idx, _, _)) = pick else { break };
            let leaf = open.swap_remove(idx);
            let split = leaf.split.as_ref().expect("picked leaf has a split");
            let col = &self.binned[split.feature];
            let (left_s, right_s): (Vec<usize>, Vec<usize>) =
                leaf.samples.iter().partition(|&&i| (col[i] as usize) <= split.bin);
            let left_stats = split.left;
            let right_stats = leaf.stats - left_stats;
            let (small, small_is_left) =
                if left_s.len() <= right_s.len() { (&left_s, true) } else { (&right_s, false) };
            let small_hist = self.histogram(small, grad, hess);
            let big_hist: Histogram = leaf
                .hist
                .iter()
                .zip(&small_hist)
                .map(|(p, c)| p.iter().zip(c).map(|(a, b)| *a - *b).collect())
                .collect();
            let (lh, rh) = if small_is_left { (small_hist, big_hist) } else { (big_hist, small_hist) };
            let (li, ri) = (nodes.len(), nodes.len() + 1);
            nodes[leaf.node] = Node {
                feature: Some(split.feature),
                threshold: edges[split.feature][split.bin],
                left: li,
                right: ri,
                value: 0.0,
            };
            nodes.push(Node { feature: None, threshold: 0.0, left: 0, right: 0, value: 0.0 });
            nodes.push(Node { feature: None, threshold: 0.0, left: 0, right: 0, value: 0.0 });
            open.push(self.open(li, leaf.depth + 1, left_s, left_stats, lh));
            open.push(self.open(ri, leaf.depth + 1, right_s, right_stats, rh));
            n_leaves += 1;
        }
        let mut updates = Vec::new();
        for leaf in open {
            let v = self.leaf_value(leaf.stats);
            nodes[leaf.node].value = v;
            updates.extend(leaf.samples.iter().map(|&i| (i, v)));
        }
        (Tree { nodes }, updates)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(margins: &[f64]) -> Vec<f64> {
    let m = margins.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = margins.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn check_matrix(x: &[Vec<f64>], n_features: Option<usize>) -> Result<usize> {
    let d = n_features.or_else(|| x.first().map(|r| r.len())).unwrap_or(0);
    for row in x {
        if row.len() != d {
            return Err(Error::shape(format!("{d} features"), row.len()));
        }
        if row.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("NaN feature value"));
        }
    }
    Ok(d)
}

/// Fits an ensemble. `weights` defaults to all ones.
pub fn fit(x: &[Vec<f64>], y: &[u32], weights: Option<&[f64]>, config: &GbtConfig) -> Result<GbtEnsemble> {
    config.validate()?;
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientData("gradient boosting needs at least 2 samples".into()));
    }
    if y.len() != n {
        return Err(Error::shape(format!("{n} labels"), y.len()));
    }
    let d = check_matrix(x, None)?;
    if d == 0 {
        return Err(Error::invalid("no features"));
    }
    let w: Vec<f64> = match weights {
        Some(w) if w.len() != n => return Err(Error::shape(format!("{n} weights"), w.len())),
        Some(w) if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) => {
            return Err(Error::invalid("sample weights must be finite and ≥ 0"))
        }
        Some(w) => w.to_vec(),
        None => vec![1.0; n],
    };
    let mut classes = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::InsufficientData("targets contain a single class".into()));
    }
    let k = classes.len();
    if config.loss == Loss::Logistic && k > 2 {
        return Err(Error::invalid(format!("logistic loss needs 2 classes, found {k}")));
    }
    let target: Vec<usize> = y.iter().map(|v| classes.binary_search(v).expect("known class")).collect();

    let edges: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|f| bin_edges(&x.iter().map(|r| r[f]).collect::<Vec<_>>(), config.n_bins))
        .collect();
    let binned: Vec<Vec<u8>> = (0..d)
        .into_par_iter()
        .map(|f| x.iter().map(|r| bin_of(&edges[f], r[f]) as u8).collect())
        .collect();
    let n_bins: Vec<usize> = edges.iter().map(|e| e.len() + 1).collect();
    let weight_kind: Vec<Weight> = w.iter().map(|&v| Weight::new(v)).collect();
    let grower = Grower { cfg: config, binned: &binned, n_bins: &n_bins, weights: &weight_kind, min_leaf: fixed(config.min_samples_leaf) };

    let total_w: f64 = w.iter().sum();
    if !(total_w > 0.0) {
        return Err(Error::invalid("sample weights sum to zero"));
    }
    let mut class_w = vec![0.0; k];
    for (&t, &wi) in target.iter().zip(&w) {
        class_w[t] += wi;
    }
    let groups = if config.loss == Loss::Logistic { 1 } else { k };
    let base_scores: Vec<f64> = if groups == 1 {
        let p = (class_w[1] / total_w).clamp(1e-12, 1.0 - 1e-12);
        vec![(p / (1.0 - p)).ln()]
    } else {
        class_w.iter().map(|c| (c / total_w).max(1e-12).ln()).collect()
    };

    let mut raw: Vec<Vec<f64>> = vec![base_scores.clone(); n];
    let samples: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
    let mut trees = Vec::with_capacity(config.max_iter * groups);
    let mut training_loss = Vec::with_capacity(config.max_iter);
    for _ in 0..config.max_iter {
        let probs: Vec<Vec<f64>> = raw.iter().map(|m| margins_to_probs(m, groups)).collect();
        let mut updates = Vec::with_capacity(groups);
        for g in 0..groups {
            let col = if groups == 1 { 1 } else { g };
            let (grad, hess): (Vec<i128>, Vec<i128>) = (0..n)
                .map(|i| {
                    let p = probs[i][col];
                    let yk = if target[i] == col { 1.0 } else { 0.0 };
                    (weight_kind[i].apply(p - yk), weight_kind[i].apply(p * (1.0 - p)))
                })
                .unzip();
            let (tree, upd) = grower.grow(&grad, &hess, samples.clone(), &edges);
            trees.push(tree);
            updates.push(upd);
        }
        for (g, upd) in updates.into_iter().enumerate() {
            for (i, v) in upd {
                raw[i][g] += v;
            }
        }
        // Zero-weight rows are not routed through the binned trees.
        for i in (0..n).filter(|&i| w[i] == 0.0) {
            for g in 0..groups {
                raw[i][g] += trees[trees.len() - groups + g].predict(&x[i]);
            }
        }
        let loss: f64 = (0..n)
            .map(|i| {
                let p = margins_to_probs(&raw[i], groups)[target[i]];
                -w[i] * p.max(1e-300).ln()
            })
            .sum::<f64>()
            / total_w;
        training_loss.push(loss);
    }
    Ok(GbtEnsemble { config: config.clone(), classes, n_features: d, bin_edges: edges, base_scores, trees, training_loss })
}

fn margins_to_probs(m: &[f64], groups: usize) -> Vec<f64> {
    if groups == 1 {
        let p = sigmoid(m[0]);
        vec![1.0 - p, p]
    } else {
        softmax(m)
    }
}

impl GbtEnsemble {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    fn groups(&self) -> usize {
        self.base_scores.len()
    }

    pub fn n_iterations(&self) -> usize {
        self.trees.len() / self.groups()
    }

    fn margins(&self, row: &[f64]) -> Vec<f64> {
        let groups = self.groups();
        let mut m = self.base_scores.clone();
        for (i, t) in self.trees.iter().enumerate() {
            m[i % groups] += t.predict(row);
        }
        m
    }

    /// Class probabilities, one row per sample, columns in `classes` order.
    pub fn predict_scores(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        check_matrix(x, Some(self.n_features))?;
        Ok(x.par_iter().map(|r| margins_to_probs(&self.margins(r), self.groups())).collect())
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict_scores(std::slice::from_ref(&row.to_vec()))?.remove(0))
    }

    /// Probability of the second class (the positive class in binary problems).
    pub fn positive_scores(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.predict_scores(x)?.into_iter().map(|r| r[1]).collect())
    }

    pub fn predict_classes(&self, x: &[Vec<f64>]) -> Result<Vec<u32>> {
        Ok(self
            .predict_scores(x)?
            .iter()
            .map(|r| self.classes[argmax(r)])
            .collect())
    }

    pub fn to_container(&self) -> Container {
        let meta = json!({
            "config": self.config,
            "classes": self.classes,
            "n_features": self.n_features,
            "base_scores": self.base_scores,
            "training_loss": self.training_loss,
        });
        let mut c = Container::new(MODEL_KIND, MODEL_VERSION, meta);
        let edge_offsets: Vec<u32> = std::iter::once(0)
            .chain(self.bin_edges.iter().scan(0u32, |acc, e| {
                *acc += e.len() as u32;
                Some(*acc)
            }))
            .collect();
        let edges: Vec<f64> = self.bin_edges.concat();
        let tree_offsets: Vec<u32> = std::iter::once(0)
            .chain(self.trees.iter().scan(0u32, |acc, t| {
                *acc += t.nodes.len() as u32;
                Some(*acc)
            }))
            .collect();
        let nodes: Vec<&Node> = self.trees.iter().flat_map(|t| &t.nodes).collect();
        let nn = nodes.len();
        c.push(Tensor::u32("edge_offsets", vec![edge_offsets.len()], edge_offsets))
            .push(Tensor::f64("edges", vec![edges.len()], edges))
            .push(Tensor::u32("tree_offsets", vec![tree_offsets.len()], tree_offsets))
            .push(Tensor::u32(
                "node_feature",
                vec![nn],
                nodes.iter().map(|n| n.feature.map_or(u32::MAX, |f| f as u32)).collect(),
            ))
            .push(Tensor::f64("node_threshold", vec![nn], nodes.iter().map(|n| n.threshold).collect()))
            .push(Tensor::u32("node_left", vec![nn], nodes.iter().map(|n| n.left as u32).collect()))
            .push(Tensor::u32("node_right", vec![nn], nodes.iter().map(|n| n.right as u32).collect()))
            .push(Tensor::f64("node_value", vec![nn], nodes.iter().map(|n| n.value).collect()));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let m = &c.meta;
        let config: GbtConfig = serde_json::from_value(m["config"].clone())?;
        let classes: Vec<u32> = serde_json::from_value(m["classes"].clone())?;
        let n_features: usize = serde_json::from_value(m["n_features"].clone())?;
        let base_scores: Vec<f64> = serde_json::from_value(m["base_scores"].clone())?;
        let training_loss: Vec<f64> = serde_json::from_value(m["training_loss"].clone()).unwrap_or_default();
        let eo = c.u32s("edge_offsets")?;
        let edges = c.f64s("edges")?;
        let bad = || Error::Format("inconsistent gbt offsets".into());
        let bin_edges = eo
            .windows(2)
            .map(|w| edges.get(w[0] as usize..w[1] as usize).map(<[f64]>::to_vec).ok_or_else(bad))
            .collect::<Result<Vec<_>>>()?;
        let to = c.u32s("tree_offsets")?;
        let (feat, thr, left, right, val) = (
            c.u32s("node_feature")?,
            c.f64s("node_threshold")?,
            c.u32s("node_left")?,
            c.u32s("node_right")?,
            c.f64s("node_value")?,
        );
        let mut trees = Vec::new();
        for w in to.windows(2) {
            let (a, b) = (w[0] as usize, w[1] as usize);
            if b > feat.len() || a >= b {
                return Err(bad());
            }
            let nodes: Vec<Node> = (a..b)
                .map(|i| Node {
                    feature: (feat[i] != u32::MAX).then_some(feat[i] as usize),
                    threshold: thr[i],
                    left: left[i] as usize,
                    right: right[i] as usize,
                    value: val[i],
                })
                .collect();
            let len = nodes.len();
            if nodes.iter().any(|n| n.feature.is_some_and(|f| f >= n_features || n.left >= len || n.right >= len)) {
                return Err(bad());
            }
            trees.push(Tree { nodes });
        }
        if base_scores.is_empty() || trees.len() % base_scores.len() != 0 {
            return Err(bad());
        }
        Ok(GbtEnsemble { config, classes, n_features, bin_edges, base_scores, trees, training_loss })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path, MODEL_KIND, MODEL_VERSION)?)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u32>) {
        let mut rng = stream_rng(seed, 0);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let y = x.iter().map(|r| (r[0] + 0.5 * r[1] > 0.1) as u32).collect();
        (x, y)
    }

    fn small(max_iter: usize) -> GbtConfig {
        GbtConfig {
            max_iter,
            max_depth: 4,
            max_leaf_nodes: 8,
            min_samples_leaf: 1.0,
            learning_rate: 0.5,
            l2_regularization: 0.0,
            n_bins: 255,
            loss: Loss::Logistic,
        }
    }

    #[test]
    fn separable_toy_is_fit_perfectly() {
        let (x, y) = toy(200, 1);
        let m = fit(&x, &y, None, &small(20)).unwrap();
        let pred = m.predict_classes(&x).unwrap();
        assert_eq!(pred, y);
    }

    #[test]
    fn heldout_auroc_is_high() {
        let (x, y) = toy(400, 2);
        let (xt, yt) = toy(400, 3);
        let m = fit(&x, &y, None, &small(30)).unwrap();
        let s = m.positive_scores(&xt).unwrap();
        let auc = crate::eval::auroc(&s, &yt.iter().map(|&v| v == 1).collect::<Vec<_>>()).unwrap();
        assert!(auc > 0.95, "auroc {auc}");
    }

    /// Exhaustive search over every threshold between consecutive distinct
    /// values, evaluated directly on per-sample gradients.
    fn oracle_gain(x: &[Vec<f64>], y: &[u32], f: usize, thr: f64) -> f64 {
        let p = y.iter().filter(|&&v| v == 1).count() as f64 / y.len() as f64;
        let h = p * (1.0 - p);
        let score = |idx: &[usize]| {
            let gs: f64 = idx.iter().map(|&i| p - y[i] as f64).sum();
            gs * gs / (h * idx.len() as f64)
        };
        let all: Vec<usize> = (0..x.len()).collect();
        let (l, r): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| x[i][f] <= thr);
        score(&l) + score(&r) - score(&all)
    }

    fn oracle_first_split(x: &[Vec<f64>], y: &[u32], min_leaf: usize) -> (usize, f64) {
        let (_, f, thr) = oracle_split(x, y, min_leaf);
        (f, thr)
    }

    fn oracle_split(x: &[Vec<f64>], y: &[u32], min_leaf: usize) -> (f64, usize, f64) {
        let all: Vec<usize> = (0..x.len()).collect();
        let mut best = (f64::NEG_INFINITY, 0, 0.0);
        for f in 0..x[0].len() {
            let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let thr = (w[0] + w[1]) / 2.0;
                let (l, r): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| x[i][f] <= thr);
                if l.len() < min_leaf || r.len() < min_leaf {
                    continue;
                }
                let gain = oracle_gain(x, y, f, thr);
                if gain > best.0 + 1e-12 {
                    best = (gain, f, thr);
                }
            }
        }
        best
    }

    #[test]
    fn first_split_matches_exhaustive_oracle() {
        for seed in 0..5 {
            let mut rng = stream_rng(seed, 11);
            let x: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
            let y: Vec<u32> = x.iter().map(|r| (r[0] * 0.3 + r[1] + rng.random_range(-0.3..0.3) > 0.7) as u32).collect();
            let m = fit(&x, &y, None, &GbtConfig { max_iter: 1, min_samples_leaf: 3.0, ..small(1) }).unwrap();
            let root = m.trees[0].nodes[0];
            let (f, thr) = oracle_first_split(&x, &y, 3);
            assert_eq!(root.feature, Some(f), "seed {seed}");
            assert!((root.threshold - thr).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_features_give_the_prior() {
        let x = vec![vec![1.0, 2.0]; 40];
        let y: Vec<u32> = (0..40).map(|i| (i % 4 == 0) as u32).collect();
        let m = fit(&x, &y, None, &small(5)).unwrap();
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
        let p = m.positive_scores(&x[..1]).unwrap()[0];
        assert!((p - 0.25).abs() < 1e-12);
    }

    #[test]
    fn balanced_prior_without_trees_is_one_half() {
        let x = vec![vec![0.0], vec![1.0]];
        let mut m = fit(&x, &[0, 1], None, &small(1)).unwrap();
        m.trees.clear();
        assert_eq!(m.positive_scores(&x).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn training_loss_is_monotone() {
        let (x, mut y) = toy(300, 4);
        // Label noise keeps the problem from being solved in one step.
        for i in (0..300).step_by(7) {
            y[i] ^= 1;
        }
        let m = fit(&x, &y, None, &GbtConfig { learning_rate: 0.3, min_samples_leaf: 5.0, ..small(40) }).unwrap();
        for w in m.training_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", w);
        }
    }

    #[test]
    fn multiclass_rows_sum_to_one() {
        let mut rng = stream_rng(5, 0);
        let x: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.random_range(0.0..3.0), rng.random_range(0.0..1.0)]).collect();
        let y: Vec<u32> = x.iter().map(|r| [4, 16, 64][r[0] as usize]).collect();
        let cfg = GbtConfig { loss: Loss::Softmax, ..small(10) };
        let m = fit(&x, &y, None, &cfg).unwrap();
        assert_eq!(m.classes, vec![4, 16, 64]);
        assert_eq!(m.trees.len(), 30);
        for row in m.predict_scores(&x).unwrap() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let acc = m.predict_classes(&x).unwrap().iter().zip(&y).filter(|(a, b)| a == b).count();
        assert!(acc > 290);
    }

    #[test]
    fn constraints_are_respected() {
        let (x, y) = toy(500, 6);
        let cfg = GbtConfig { max_depth: 3, max_leaf_nodes: 5, min_samples_leaf: 20.0, ..small(5) };
        let m = fit(&x, &y, None, &cfg).unwrap();
        for t in &m.trees {
            assert!(t.depth() <= 3);
            assert!(t.n_leaves() <= 5);
            // Count training samples per leaf.
            let mut counts = std::collections::HashMap::new();
            for r in &x {
                let mut i = 0;
                while let Some(f) = t.nodes[i].feature {
                    i = if r[f] <= t.nodes[i].threshold { t.nodes[i].left } else { t.nodes[i].right };
                }
                *counts.entry(i).or_insert(0) += 1;
            }
            assert!(counts.values().all(|&c| c >= 20));
        }
    }

    #[test]
    fn input_errors() {
        let (x, y) = toy(20, 0);
        assert!(fit(&x, &[1; 20], None, &small(2)).is_err());
        let mut bad = x.clone();
        bad[3][1] = f64::NAN;
        assert!(fit(&bad, &y, None, &small(2)).is_err());
        let three: Vec<u32> = (0..20).map(|i| i % 3).collect();
        assert!(fit(&x, &three, None, &small(2)).is_err());
        let m = fit(&x, &y, None, &small(2)).unwrap();
        assert!(m.predict_scores(&[vec![1.0]]).is_err());
    }

    #[test]
    fn container_round_trip() {
        let (x, y) = toy(100, 8);
        let m = fit(&x, &y, None, &small(5)).unwrap();
        let back = GbtEnsemble::from_container(&m.to_container()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn quantile_edges_are_bounded() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sqrt()).collect();
        let e = bin_edges(&v, 16);
        assert_eq!(e.len(), 15);
        assert!(e.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(bin_of(&e, -1.0), 0);
        assert_eq!(bin_of(&e, 1e9), 15);
        assert_eq!(bin_edges(&[1.0, 3.0, 3.0, 2.0], 255), vec![1.5, 2.5]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn integer_weights_equal_duplication(
            rows in prop::collection::vec((0u8..6, 0u8..6, any::<bool>(), 1u8..4), 6..20),
        ) {
            let x: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0 as f64, r.1 as f64]).collect();
            let y: Vec<u32> = rows.iter().map(|r| r.2 as u32).collect();
            prop_assume!(y.contains(&0) && y.contains(&1));
            let w: Vec<f64> = rows.iter().map(|r| r.3 as f64).collect();
            let mut xd = Vec::new();
            let mut yd = Vec::new();
            for i in 0..x.len() {
                for _ in 0..rows[i].3 {
                    xd.push(x[i].clone());
                    yd.push(y[i]);
                }
            }
            let cfg = GbtConfig { min_samples_leaf: 2.0, ..small(4) };
            let a = fit(&x, &y, Some(&w), &cfg).unwrap();
            let b = fit(&xd, &yd, None, &cfg).unwrap();
            prop_assert_eq!(a.trees, b.trees);
            prop_assert_eq!(a.base_scores, b.base_scores);
        }

        #[test]
        fn histogram_gain_equals_exact_gain(
            vals in prop::collection::vec((0u16..40, any::<bool>()), 10..40),
        ) {
            let x: Vec<Vec<f64>> = vals.iter().map(|v| vec![v.0 as f64 / 7.0]).collect();
            let y: Vec<u32> = vals.iter().map(|v| v.1 as u32).collect();
            prop_assume!(y.contains(&0) && y.contains(&1));
            let m = fit(&x, &y, None, &GbtConfig { max_iter: 1, ..small(1) }).unwrap();
            let (best, _, _) = oracle_split(&x, &y, 1);
            let root = m.trees[0].nodes[0];
            match root.feature {
                Some(rf) => {
                    let chosen = oracle_gain(&x, &y, rf, root.threshold);
                    prop_assert!((chosen - best).abs() <= 1e-9 * best.abs().max(1.0), "{} vs {}", chosen, best);
                }
                None => prop_assert!(best <= 1e-9),
            }
        }
    }
}
