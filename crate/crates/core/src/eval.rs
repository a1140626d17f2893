//! Evaluation protocols: link prediction AUC, node classification, path
//! prediction and node recommendation NDCG, plus the one-vs-rest logistic
//! regression classifier they share.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::codestore::{code_similarity, CodeStore, LookupTables};
use crate::error::{Error, Result};
use crate::graph::{Graph, Labels, PathMatrix};
use crate::seeds;

// ---------------------------------------------------------------------------
// Edge splits
// ---------------------------------------------------------------------------

/// Held-out edge fractions for link prediction.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            val_fraction: 0.05,
            test_fraction: 0.10,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.val_fraction < 0.0 || self.test_fraction < 0.0 {
            return Err(Error::Config("split fractions must be >= 0".into()));
        }
        if self.val_fraction + self.test_fraction >= 1.0 {
            return Err(Error::Config("split fractions must sum below 1".into()));
        }
        Ok(())
    }
}

pub struct EdgeSplit {
    pub train: Graph,
    pub val: Vec<(u32, u32)>,
    pub test: Vec<(u32, u32)>,
}

/// Remove a seeded random sample of edges for validation/testing. Newly
/// isolated nodes are only logged; the node set never changes.
pub fn split_edges(graph: &Graph, spec: &SplitSpec) -> Result<EdgeSplit> {
    spec.validate()?;
    let mut edges: Vec<(u32, u32)> = graph.edges().collect();
    let mut rng = seeds::rng_for(spec.seed, seeds::SPLIT, 0);
    // Fisher-Yates.
    for i in (1..edges.len()).rev() {
        let j = rng.random_range(0..=i);
        edges.swap(i, j);
    }
    let n_test = (spec.test_fraction * edges.len() as f64).round() as usize;
    let n_val = (spec.val_fraction * edges.len() as f64).round() as usize;
    if n_test + n_val >= edges.len() {
        return Err(Error::Config(
            "split would remove every training edge".into(),
        ));
    }
    let test: Vec<(u32, u32)> = edges[..n_test].to_vec();
    let val: Vec<(u32, u32)> = edges[n_test..n_test + n_val].to_vec();
    let removed: Vec<(u32, u32)> = edges[..n_test + n_val].to_vec();
    let train = graph.without_edges(&removed);
    let isolated = (0..graph.num_nodes() as u32)
        .filter(|&i| graph.degree(i) > 0 && train.degree(i) == 0)
        .count();
    if isolated > 0 {
        log::warn!("edge split isolated {isolated} previously connected nodes");
    }
    Ok(EdgeSplit { train, val, test })
}

/// Uniform non-edges of `graph` (self-pairs excluded), sampled with
/// replacement.
pub fn sample_non_edges(graph: &Graph, count: usize, rng: &mut ChaCha8Rng) -> Vec<(u32, u32)> {
    let n = graph.num_nodes() as u32;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i != j && !graph.has_edge(i, j) {
            out.push((i, j));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Pair scorers
// ---------------------------------------------------------------------------

/// Similarity between two stored nodes, higher = closer.
pub trait PairScorer {
    fn score(&self, i: u32, j: u32) -> f64;
}

/// Continuous embeddings scored by negative Euclidean distance.
pub struct EmbeddingScorer<'a> {
    pub embeddings: &'a Array2<f32>,
}

impl PairScorer for EmbeddingScorer<'_> {
    fn score(&self, i: u32, j: u32) -> f64 {
        let (a, b) = (self.embeddings.row(i as usize), self.embeddings.row(j as usize));
        let mut ss = 0f64;
        for (&x, &y) in a.iter().zip(b.iter()) {
            let d = (x - y) as f64;
            ss += d * d;
        }
        -ss.sqrt()
    }
}

/// Discrete codes scored by table lookups.
pub struct CodeScorer<'a> {
    pub store: &'a CodeStore,
    pub tables: &'a LookupTables,
}

impl PairScorer for CodeScorer<'_> {
    fn score(&self, i: u32, j: u32) -> f64 {
        code_similarity(self.store, self.tables, i as usize, j as usize)
            .expect("node ids validated by the caller") as f64
    }
}

// ---------------------------------------------------------------------------
// AUC
// ---------------------------------------------------------------------------

/// Mann-Whitney rank AUC with ties counted half.
pub fn rank_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores must be finite"));
    let mut pos_rank_sum = 0f64;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // Average rank for the tie group (1-based ranks i+1..=j).
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for item in &all[i..j] {
            if item.1 {
                pos_rank_sum += avg_rank;
            }
        }
        i = j;
    }
    let p = pos.len() as f64;
    let n = neg.len() as f64;
    (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n)
}

/// Score held-out positive edges against an equal number of uniformly
/// sampled non-edges of the full graph.
pub fn link_prediction_auc(
    scorer: &dyn PairScorer,
    full_graph: &Graph,
    positives: &[(u32, u32)],
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::Eval("no held-out edges to score".into()));
    }
    let negatives = sample_non_edges(full_graph, positives.len(), rng);
    let pos: Vec<f64> = positives.iter().map(|&(i, j)| scorer.score(i, j)).collect();
    let neg: Vec<f64> = negatives.iter().map(|&(i, j)| scorer.score(i, j)).collect();
    Ok(rank_auc(&pos, &neg))
}

/// Convenience wrapper for continuous embeddings.
pub fn embedding_link_auc(
    embeddings: &Array2<f32>,
    full_graph: &Graph,
    positives: &[(u32, u32)],
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    link_prediction_auc(&EmbeddingScorer { embeddings }, full_graph, positives, rng)
}

// ---------------------------------------------------------------------------
// Logistic regression (one-vs-rest)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct LrConfig {
    pub l2: f64,
    pub lr: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for LrConfig {
    fn default() -> Self {
        LrConfig {
            l2: 1e-4,
            lr: 0.1,
            max_iters: 2000,
            tol: 1e-5,
        }
    }
}

/// One-vs-rest logistic regression; weights are C x (D+1) with the bias in
/// the last column. Training is full-batch gradient descent from zero
/// weights, so fitting is fully deterministic.
#[derive(Debug, Clone)]
pub struct LrClassifier {
    pub weights: Array2<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn lr_fit(
    features: &Array2<f64>,
    targets: &[u32],
    n_classes: usize,
    cfg: &LrConfig,
) -> Result<LrClassifier> {
    let (n, d) = features.dim();
    if d == 0 {
        return Err(Error::Eval("zero-dimensional features".into()));
    }
    if n == 0 || targets.len() != n {
        return Err(Error::Eval(format!(
            "{} feature rows vs {} targets",
            n,
            targets.len()
        )));
    }
    if n_classes < 2 {
        return Err(Error::Eval("need at least two classes".into()));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eval("non-finite feature values".into()));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t as usize >= n_classes) {
        return Err(Error::Eval(format!("target {bad} >= {n_classes} classes")));
    }

    let mut weights = Array2::<f64>::zeros((n_classes, d + 1));
    let inv_n = 1.0 / n as f64;
    for class in 0..n_classes {
        let y: Vec<f64> = targets
            .iter()
            .map(|&t| if t as usize == class { 1.0 } else { 0.0 })
            .collect();
        let mut w = Array1::<f64>::zeros(d + 1);
        for _ in 0..cfg.max_iters {
            // grad = 1/n X^T (sigma(Xw) - y) + l2 * w  (bias unregularised)
            let mut grad = Array1::<f64>::zeros(d + 1);
            for r in 0..n {
                let row = features.row(r);
                let mut z = w[d];
                for c in 0..d {
                    z += row[c] * w[c];
                }
                let err = (sigmoid(z) - y[r]) * inv_n;
                for c in 0..d {
                    grad[c] += err * row[c];
                }
                grad[d] += err;
            }
            for c in 0..d {
                grad[c] += cfg.l2 * w[c];
            }
            let norm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm < cfg.tol {
                break;
            }
            for c in 0..=d {
                w[c] -= cfg.lr * grad[c];
            }
        }
        weights.row_mut(class).assign(&w);
    }
    Ok(LrClassifier { weights })
}

impl LrClassifier {
    pub fn scores(&self, features: &Array2<f64>) -> Array2<f64> {
        let (n, d) = features.dim();
        let c = self.weights.nrows();
        let mut out = Array2::<f64>::zeros((n, c));
        for r in 0..n {
            for class in 0..c {
                let w = self.weights.row(class);
                let mut z = w[d];
                for col in 0..d {
                    z += features[(r, col)] * w[col];
                }
                out[(r, class)] = z;
            }
        }
        out
    }

    /// Argmax class per row (ties to the lowest class id).
    pub fn predict(&self, features: &Array2<f64>) -> Vec<u32> {
        let scores = self.scores(features);
        (0..scores.nrows())
            .map(|r| {
                let row = scores.row(r);
                let mut best = 0usize;
                for c in 1..row.len() {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                best as u32
            })
            .collect()
    }
}

pub fn lr_predict(model: &LrClassifier, features: &Array2<f64>) -> Vec<u32> {
    model.predict(features)
}

// ---------------------------------------------------------------------------
// F1
// ---------------------------------------------------------------------------

/// Macro and micro F1 over single-label predictions. Macro averages the
/// per-class F1 of classes present in the gold labels; micro pools counts
/// (equal to accuracy for single-label data).
pub fn f1_scores(gold: &[u32], pred: &[u32], n_classes: usize) -> (f64, f64) {
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&g, &p) in gold.iter().zip(pred.iter()) {
        if g == p {
            tp[g as usize] += 1;
        } else {
            fp[p as usize] += 1;
            fn_[g as usize] += 1;
        }
    }
    let mut macro_sum = 0f64;
    let mut macro_count = 0usize;
    for c in 0..n_classes {
        if tp[c] + fn_[c] == 0 {
            continue; // class absent from gold
        }
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        let f1 = if denom == 0 {
            0.0
        } else {
            2.0 * tp[c] as f64 / denom as f64
        };
        macro_sum += f1;
        macro_count += 1;
    }
    let total_tp: usize = tp.iter().sum();
    let total_fp: usize = fp.iter().sum();
    let total_fn: usize = fn_.iter().sum();
    let micro_denom = 2 * total_tp + total_fp + total_fn;
    let micro = if micro_denom == 0 {
        0.0
    } else {
        2.0 * total_tp as f64 / micro_denom as f64
    };
    let macro_f1 = if macro_count == 0 {
        0.0
    } else {
        macro_sum / macro_count as f64
    };
    (macro_f1, micro)
}

/// Per-class F1 (0 where a class never occurs in gold or predictions).
pub fn per_class_f1(gold: &[u32], pred: &[u32], n_classes: usize) -> Vec<f64> {
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&g, &p) in gold.iter().zip(pred.iter()) {
        if g == p {
            tp[g as usize] += 1;
        } else {
            fp[p as usize] += 1;
            fn_[g as usize] += 1;
        }
    }
    (0..n_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Node classification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct ClassificationResult {
    pub fraction: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
}

/// Multi-label nodes contribute their lowest label id as the target class.
fn primary_labels(labels: &Labels) -> Vec<(u32, u32)> {
    labels
        .rows
        .iter()
        .enumerate()
        .filter_map(|(node, row)| row.first().map(|&l| (node as u32, l)))
        .collect()
}

/// Train an LR classifier on a random fraction of labelled nodes and score
/// the rest, averaged over `repeats` seeded draws per fraction. Draws
/// missing a class are redrawn (up to 100 attempts).
pub fn node_classification(
    features: &Array2<f32>,
    labels: &Labels,
    fractions: &[f64],
    repeats: usize,
    seed: u64,
    lr_cfg: &LrConfig,
) -> Result<Vec<ClassificationResult>> {
    let labelled = primary_labels(labels);
    if labelled.len() < 2 {
        return Err(Error::Eval("need at least two labelled nodes".into()));
    }
    let n_classes = labels.count;
    let distinct: std::collections::BTreeSet<u32> = labelled.iter().map(|&(_, l)| l).collect();
    if distinct.len() < 2 {
        return Err(Error::Eval(
            "node classification needs at least two distinct classes".into(),
        ));
    }

    let feat64 = features.mapv(|v| v as f64);
    let mut results = Vec::with_capacity(fractions.len());
    for (fi, &fraction) in fractions.iter().enumerate() {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Config(format!(
                "training fraction must be in (0,1), got {fraction}"
            )));
        }
        let mut macro_acc = 0f64;
        let mut micro_acc = 0f64;
        for rep in 0..repeats {
            let mut rng =
                seeds::rng_for(seed, seeds::EVAL, (fi as u64) << 32 | rep as u64);
            let train_n = ((fraction * labelled.len() as f64).ceil() as usize)
                .clamp(distinct.len(), labelled.len() - 1);
            let mut order: Vec<usize> = (0..labelled.len()).collect();
            let mut chosen = None;
            for _attempt in 0..100 {
                for i in (1..order.len()).rev() {
                    let j = rng.random_range(0..=i);
                    order.swap(i, j);
                }
                let classes: std::collections::BTreeSet<u32> =
                    order[..train_n].iter().map(|&i| labelled[i].1).collect();
                if classes.len() == distinct.len() {
                    chosen = Some(order.clone());
                    break;
                }
            }
            let order = chosen.ok_or_else(|| {
                Error::Eval("could not draw a training set covering every class".into())
            })?;
            let (train_idx, test_idx) = order.split_at(train_n);

            let gather = |idx: &[usize]| -> (Array2<f64>, Vec<u32>) {
                let mut x = Array2::<f64>::zeros((idx.len(), feat64.ncols()));
                let mut y = Vec::with_capacity(idx.len());
                for (r, &i) in idx.iter().enumerate() {
                    let (node, label) = labelled[i];
                    x.row_mut(r).assign(&feat64.row(node as usize));
                    y.push(label);
                }
                (x, y)
            };
            let (x_train, y_train) = gather(train_idx);
            let (x_test, y_test) = gather(test_idx);
            let model = lr_fit(&x_train, &y_train, n_classes, lr_cfg)?;
            let pred = model.predict(&x_test);
            let (macro_f1, micro_f1) = f1_scores(&y_test, &pred, n_classes);
            macro_acc += macro_f1;
            micro_acc += micro_f1;
        }
        results.push(ClassificationResult {
            fraction,
            macro_f1: macro_acc / repeats as f64,
            micro_f1: micro_acc / repeats as f64,
        });
    }
    Ok(results)
}

// ---------------------------------------------------------------------------
// Path prediction
// ---------------------------------------------------------------------------

pub const PATH_CLASSES: usize = 5;

/// Class of a node pair: hop counts 1..=4 map to classes 0..=3; anything
/// farther (or disconnected) is the "no" class 4.
pub fn path_class(delta: u8) -> u32 {
    if delta >= 1 && delta <= 4 {
        (delta - 1) as u32
    } else {
        4
    }
}

#[derive(Debug, Clone)]
pub struct PathPredictionResult {
    pub train_ratio: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub avg_f1: f64,
    pub per_class_f1: Vec<f64>,
    /// Classes that could not fill their quota: (class, available).
    pub shortfall: Vec<(u32, usize)>,
}

struct Reservoir {
    cap: usize,
    seen: usize,
    items: Vec<(u32, u32)>,
}

impl Reservoir {
    fn new(cap: usize) -> Self {
        Reservoir {
            cap,
            seen: 0,
            items: Vec::with_capacity(cap.min(4096)),
        }
    }

    fn offer(&mut self, pair: (u32, u32), rng: &mut ChaCha8Rng) {
        self.seen += 1;
        if self.items.len() < self.cap {
            self.items.push(pair);
        } else {
            let r = rng.random_range(0..self.seen);
            if r < self.cap {
                self.items[r] = pair;
            }
        }
    }
}

/// Five-class path prediction over elementwise-product pair features,
/// `pairs_per_class` pairs per path class (the "no" class is capped at
/// twice that to bound its natural imbalance).
pub fn path_prediction(
    embeddings: &Array2<f32>,
    paths: &PathMatrix,
    train_ratio: f64,
    pairs_per_class: usize,
    seed: u64,
    lr_cfg: &LrConfig,
) -> Result<PathPredictionResult> {
    if paths.max_hop() < 4 {
        return Err(Error::Eval(format!(
            "path prediction needs hop distances up to 4, matrix is truncated at {}",
            paths.max_hop()
        )));
    }
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::Config(format!(
            "train ratio must be in (0,1), got {train_ratio}"
        )));
    }
    let n = paths.num_nodes();
    if embeddings.nrows() != n {
        return Err(Error::Dim(format!(
            "{} embedding rows vs {} nodes",
            embeddings.nrows(),
            n
        )));
    }
    if pairs_per_class == 0 {
        return Err(Error::Config("pairs_per_class must be >= 1".into()));
    }

    let mut rng = seeds::rng_for(seed, seeds::EVAL, 0xA11);
    let mut reservoirs: Vec<Reservoir> = (0..PATH_CLASSES)
        .map(|c| Reservoir::new(if c == PATH_CLASSES - 1 {
            2 * pairs_per_class
        } else {
            pairs_per_class
        }))
        .collect();
    for i in 0..n as u32 {
        let row = paths.row(i);
        for j in (i + 1)..n as u32 {
            let class = path_class(row[j as usize]) as usize;
            reservoirs[class].offer((i, j), &mut rng);
        }
    }

    let class_names = ["1", "2", "3", "4", "no"];
    let mut shortfall = Vec::new();
    for (c, res) in reservoirs.iter().enumerate() {
        if res.items.is_empty() {
            return Err(Error::Eval(format!(
                "path class `{}` has no pairs in this graph",
                class_names[c]
            )));
        }
        if c < PATH_CLASSES - 1 && res.seen < pairs_per_class {
            log::warn!(
                "path class `{}` has only {} pairs (wanted {pairs_per_class})",
                class_names[c],
                res.seen
            );
            shortfall.push((c as u32, res.seen));
        }
    }

    // Stratified split per class.
    let d = embeddings.ncols();
    let mut x_train_rows: Vec<(u32, u32)> = Vec::new();
    let mut y_train: Vec<u32> = Vec::new();
    let mut x_test_rows: Vec<(u32, u32)> = Vec::new();
    let mut y_test: Vec<u32> = Vec::new();
    for (c, res) in reservoirs.iter_mut().enumerate() {
        for i in (1..res.items.len()).rev() {
            let j = rng.random_range(0..=i);
            res.items.swap(i, j);
        }
        let n_train = ((train_ratio * res.items.len() as f64).round() as usize)
            .clamp(1, res.items.len().saturating_sub(1).max(1));
        for (idx, &pair) in res.items.iter().enumerate() {
            if idx < n_train {
                x_train_rows.push(pair);
                y_train.push(c as u32);
            } else {
                x_test_rows.push(pair);
                y_test.push(c as u32);
            }
        }
    }

    let featurise = |pairs: &[(u32, u32)]| -> Array2<f64> {
        let mut x = Array2::<f64>::zeros((pairs.len(), d));
        for (r, &(i, j)) in pairs.iter().enumerate() {
            let (a, b) = (embeddings.row(i as usize), embeddings.row(j as usize));
            for c in 0..d {
                x[(r, c)] = a[c] as f64 * b[c] as f64;
            }
        }
        x
    };
    let model = lr_fit(&featurise(&x_train_rows), &y_train, PATH_CLASSES, lr_cfg)?;
    let pred = model.predict(&featurise(&x_test_rows));
    let (macro_f1, micro_f1) = f1_scores(&y_test, &pred, PATH_CLASSES);
    let per_class = per_class_f1(&y_test, &pred, PATH_CLASSES);
    Ok(PathPredictionResult {
        train_ratio,
        macro_f1,
        micro_f1,
        avg_f1: 0.5 * (macro_f1 + micro_f1),
        per_class_f1: per_class,
        shortfall,
    })
}

// ---------------------------------------------------------------------------
// Node recommendation NDCG
// ---------------------------------------------------------------------------

/// NDCG of one ranking: `rels[i]` marks whether the candidate at rank i+1 is
/// relevant; `total_relevant` normalises the ideal DCG.
pub fn ndcg_at_k(rels: &[bool], total_relevant: usize, k: usize) -> f64 {
    if total_relevant == 0 {
        return 0.0;
    }
    let depth = k.min(rels.len());
    let mut dcg = 0f64;
    for (i, &rel) in rels[..depth].iter().enumerate() {
        if rel {
            dcg += 1.0 / ((i + 2) as f64).log2();
        }
    }
    let ideal_depth = total_relevant.min(k);
    let idcg: f64 = (0..ideal_depth).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    dcg / idcg
}

#[derive(Debug, Clone, Copy)]
pub struct NdcgResult {
    pub ndcg: f64,
    /// Node evaluations contributing to the mean (summed over repeats).
    pub evaluated: usize,
    /// Nodes skipped for lack of held-out neighbours (summed over repeats).
    pub excluded: usize,
}

/// Hold out `holdout` of the edges, then rank every non-training node for
/// each node with at least one held-out neighbour and average NDCG@k,
/// repeated over fresh splits.
pub fn node_recommendation_ndcg(
    scorer: &dyn PairScorer,
    graph: &Graph,
    holdout: f64,
    k: usize,
    repeats: usize,
    seed: u64,
) -> Result<NdcgResult> {
    if k == 0 || repeats == 0 {
        return Err(Error::Config("k and repeats must be >= 1".into()));
    }
    let n = graph.num_nodes();
    let mut total = 0f64;
    let mut evaluated = 0usize;
    let mut excluded = 0usize;
    for rep in 0..repeats {
        let spec = SplitSpec {
            val_fraction: 0.0,
            test_fraction: holdout,
            seed: seeds::derive(seed, seeds::EVAL, 0xD00 + rep as u64),
        };
        let split = split_edges(graph, &spec)?;
        let mut held: Vec<Vec<u32>> = vec![Vec::new(); n];
        for &(i, j) in &split.test {
            held[i as usize].push(j);
            held[j as usize].push(i);
        }
        for node in 0..n as u32 {
            let relevant = &held[node as usize];
            if relevant.is_empty() {
                if graph.degree(node) > 0 {
                    excluded += 1;
                }
                continue;
            }
            let train_neigh = split.train.neighbours(node);
            let mut ranked: Vec<(u32, f64)> = (0..n as u32)
                .filter(|&c| c != node && train_neigh.binary_search(&c).is_err())
                .map(|c| (c, scorer.score(node, c)))
                .collect();
            ranked.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .expect("scores must be finite")
                    .then(a.0.cmp(&b.0))
            });
            let rels: Vec<bool> = ranked
                .iter()
                .take(k)
                .map(|&(c, _)| relevant.contains(&c))
                .collect();
            total += ndcg_at_k(&rels, relevant.len(), k);
            evaluated += 1;
        }
    }
    if evaluated == 0 {
        return Err(Error::Eval(
            "no node retained a held-out neighbour to evaluate".into(),
        ));
    }
    Ok(NdcgResult {
        ndcg: total / evaluated as f64,
        evaluated,
        excluded,
    })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::UNREACHABLE;
    use approx::assert_abs_diff_eq;

    #[test]
    fn auc_perfect_separation() {
        let auc = rank_auc(&[3.0, 4.0, 5.0], &[0.0, 1.0, 2.0]);
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn auc_single_inversion_is_eight_ninths() {
        // Negatives: 1, 2, 4 — positive 3 loses to negative 4 only.
        let auc = rank_auc(&[3.0, 5.0, 6.0], &[1.0, 2.0, 4.0]);
        assert_abs_diff_eq!(auc, 8.0 / 9.0, epsilon = 1e-12);
    }

    #[test]
    fn auc_ties_count_half() {
        let auc = rank_auc(&[1.0], &[1.0]);
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn auc_random_scores_near_half() {
        use rand::Rng;
        let mut rng = seeds::rng(7);
        let pos: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let neg: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let auc = rank_auc(&pos, &neg);
        assert!((auc - 0.5).abs() < 0.05, "auc {auc}");
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let pos = vec![0.3, 1.2, 0.9, 2.4];
        let neg = vec![0.1, 0.8, 1.5];
        let base = rank_auc(&pos, &neg);
        let f = |x: f64| (3.0 * x).exp() - 1.0;
        let tp: Vec<f64> = pos.iter().map(|&x| f(x)).collect();
        let tn: Vec<f64> = neg.iter().map(|&x| f(x)).collect();
        assert_abs_diff_eq!(rank_auc(&tp, &tn), base, epsilon = 1e-12);
    }

    fn blobs(n_per: usize, sep: f64) -> (Array2<f64>, Vec<u32>) {
        use rand::Rng;
        let mut rng = seeds::rng(5);
        let mut x = Array2::<f64>::zeros((2 * n_per, 2));
        let mut y = Vec::new();
        for i in 0..2 * n_per {
            let class = (i >= n_per) as u32;
            let cx = if class == 0 { 0.0 } else { sep };
            x[(i, 0)] = cx + rng.random::<f64>() * 0.5;
            x[(i, 1)] = rng.random::<f64>() * 0.5;
            y.push(class);
        }
        (x, y)
    }

    #[test]
    fn lr_separates_blobs_perfectly() {
        let (x, y) = blobs(30, 5.0);
        let model = lr_fit(&x, &y, 2, &LrConfig::default()).unwrap();
        let pred = model.predict(&x);
        assert_eq!(pred, y);
    }

    #[test]
    fn lr_rejects_bad_inputs() {
        let x = Array2::<f64>::zeros((3, 0));
        assert!(lr_fit(&x, &[0, 1, 0], 2, &LrConfig::default()).is_err());
        let mut x = Array2::<f64>::zeros((2, 2));
        x[(0, 0)] = f64::NAN;
        assert!(lr_fit(&x, &[0, 1], 2, &LrConfig::default()).is_err());
        let x = Array2::<f64>::zeros((2, 2));
        assert!(lr_fit(&x, &[0, 0], 1, &LrConfig::default()).is_err());
    }

    #[test]
    fn lr_is_deterministic() {
        let (x, y) = blobs(20, 3.0);
        let a = lr_fit(&x, &y, 2, &LrConfig::default()).unwrap();
        let b = lr_fit(&x, &y, 2, &LrConfig::default()).unwrap();
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn ndcg_unit_cases() {
        // All relevant items at the top.
        assert_abs_diff_eq!(ndcg_at_k(&[true, true, false], 2, 50), 1.0, epsilon = 1e-12);
        // Single relevant item at rank 2.
        assert_abs_diff_eq!(
            ndcg_at_k(&[false, true, false], 1, 50),
            1.0 / 3f64.log2(),
            epsilon = 1e-12
        );
        // k larger than the candidate list: computed over what exists.
        assert_abs_diff_eq!(ndcg_at_k(&[true], 1, 50), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn f1_micro_equals_accuracy_for_single_label() {
        let gold = vec![0, 0, 1, 1, 2, 2];
        let pred = vec![0, 1, 1, 1, 2, 0];
        let (_, micro) = f1_scores(&gold, &pred, 3);
        assert_abs_diff_eq!(micro, 4.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn path_class_mapping() {
        assert_eq!(path_class(1), 0);
        assert_eq!(path_class(4), 3);
        assert_eq!(path_class(5), 4);
        assert_eq!(path_class(UNREACHABLE), 4);
    }

    #[test]
    fn split_edges_counts() {
        let edges: Vec<(u32, u32)> = (0..20u32).map(|i| (i, (i + 1) % 20)).collect();
        let g = Graph::from_edges(20, &edges).unwrap();
        let split = split_edges(
            &g,
            &SplitSpec {
                val_fraction: 0.05,
                test_fraction: 0.10,
                seed: 3,
            },
        )
        .unwrap();
        assert_eq!(split.test.len(), 2);
        assert_eq!(split.val.len(), 1);
        assert_eq!(split.train.num_edges(), 17);
        // Every held-out edge is absent from the training graph.
        for &(i, j) in split.test.iter().chain(&split.val) {
            assert!(!split.train.has_edge(i, j));
            assert!(g.has_edge(i, j));
        }
    }

    #[test]
    fn link_auc_requires_positives() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2)]).unwrap();
        let emb = Array2::<f32>::zeros((4, 3));
        let mut rng = seeds::rng(0);
        assert!(embedding_link_auc(&emb, &g, &[], &mut rng).is_err());
    }

    #[test]
    fn link_auc_perfect_when_embeddings_mirror_edges() {
        // Two tight clusters; all edges within clusters, negatives mostly
        // across.
        let edges = vec![(0u32, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)];
        let g = Graph::from_edges(6, &edges).unwrap();
        let mut emb = Array2::<f32>::zeros((6, 2));
        for i in 0..3 {
            emb[(i, 0)] = 0.0 + i as f32 * 0.01;
        }
        for i in 3..6 {
            emb[(i, 0)] = 10.0 + i as f32 * 0.01;
        }
        let mut rng = seeds::rng(1);
        let auc = embedding_link_auc(&emb, &g, &[(0, 1), (3, 4)], &mut rng).unwrap();
        assert_eq!(auc, 1.0);
    }
}
