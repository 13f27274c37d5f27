//! Classifiers on embedding coordinates, stratified cross-validation and
//! class-averaged scores.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distmat::DistanceMatrix;
use crate::embedding::{Embedding, Reducer};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Points with integer class ids in `0..n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbedding {
    dim: usize,
    coords: Vec<f64>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabeledEmbedding {
    pub fn new(dim: usize, coords: Vec<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if dim == 0 || coords.len() != dim * labels.len() {
            return Err(Error::DimensionMismatch {
                left: coords.len(),
                right: dim * labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidParameter(format!(
                "class id {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(LabeledEmbedding {
            dim,
            coords,
            labels,
            n_classes,
        })
    }

    pub fn from_embedding(e: &Embedding, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        LabeledEmbedding::new(e.dim(), e.coords().to_vec(), labels, n_classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledEmbedding {
        LabeledEmbedding {
            dim: self.dim,
            coords: indices
                .iter()
                .flat_map(|&i| self.point(i).iter().copied())
                .collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }
}

/// Maps string labels to ids by sorted unique name.
pub fn encode_labels(labels: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut names: Vec<String> = labels.to_vec();
    names.sort();
    names.dedup();
    let ids = labels
        .iter()
        .map(|l| names.binary_search(l).expect("label present"))
        .collect();
    (ids, names)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Majority vote over the `k` nearest training points. Ties go to the class
/// with the smaller summed distance, then to the smaller class id.
pub fn knn_classify(train: &LabeledEmbedding, test: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > train.len() {
        return Err(Error::InvalidParameter(format!(
            "k = {k} must lie in [1, {}]",
            train.len()
        )));
    }
    if !test.len().is_multiple_of(train.dim) {
        return Err(Error::DimensionMismatch {
            left: test.len(),
            right: train.dim,
        });
    }
    let predictions = test
        .chunks(train.dim)
        .map(|x| {
            let mut order: Vec<(f64, usize)> = (0..train.len())
                .map(|i| (sq_dist(x, train.point(i)), i))
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut votes = vec![(0usize, 0.0f64); train.n_classes];
            for &(d2, i) in &order[..k] {
                let vote = &mut votes[train.labels[i]];
                vote.0 += 1;
                vote.1 += d2.sqrt();
            }
            let mut best = 0;
            for c in 1..votes.len() {
                let (count, dist) = votes[c];
                let (best_count, best_dist) = votes[best];
                if count > best_count || (count == best_count && dist < best_dist) {
                    best = c;
                }
            }
            best
        })
        .collect();
    Ok(predictions)
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(usize),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A CART tree stored as a flat node list rooted at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn predict_one(&self, x: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(c) => return c,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

fn class_counts(data: &LabeledEmbedding, idx: &[usize]) -> Vec<usize> {
    let mut counts = vec![0; data.n_classes];
    for &i in idx {
        counts[data.labels[i]] += 1;
    }
    counts
}

fn majority(counts: &[usize]) -> usize {
    (0..counts.len()).fold(0, |best, c| if counts[c] > counts[best] { c } else { best })
}

fn gini(counts: &[usize], total: usize) -> f64 {
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

/// Best threshold on one feature as `(weighted impurity, threshold)`.
fn best_threshold(data: &LabeledEmbedding, idx: &[usize], feature: usize) -> Option<(f64, f64)> {
    let mut sorted: Vec<(f64, usize)> = idx
        .iter()
        .map(|&i| (data.point(i)[feature], data.labels[i]))
        .collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = sorted.len();
    let mut left = vec![0; data.n_classes];
    let mut right = vec![0; data.n_classes];
    sorted.iter().for_each(|&(_, c)| right[c] += 1);
    let mut best: Option<(f64, f64)> = None;
    for split in 1..n {
        let c = sorted[split - 1].1;
        left[c] += 1;
        right[c] -= 1;
        let (lo, hi) = (sorted[split - 1].0, sorted[split].0);
        if lo == hi {
            continue;
        }
        let score = (split as f64 * gini(&left, split)
            + (n - split) as f64 * gini(&right, n - split))
            / n as f64;
        if best.is_none_or(|(b, _)| score < b) {
            best = Some((score, 0.5 * (lo + hi)));
        }
    }
    best
}

fn grow(
    data: &LabeledEmbedding,
    idx: Vec<usize>,
    max_features: usize,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<Node>,
) -> usize {
    let counts = class_counts(data, &idx);
    let at = nodes.len();
    nodes.push(Node::Leaf(majority(&counts)));
    if counts.iter().filter(|&&c| c > 0).count() <= 1 {
        return at;
    }
    let mut features: Vec<usize> = (0..data.dim).collect();
    features.shuffle(rng);
    let mut best: Option<(f64, usize, f64)> = None;
    // Keep drawing features past the quota until a usable split appears.
    for (tried, &f) in features.iter().enumerate() {
        if tried >= max_features && best.is_some() {
            break;
        }
        if let Some((score, threshold)) = best_threshold(data, &idx, f) {
            if best.is_none_or(|(b, _, _)| score < b) {
                best = Some((score, f, threshold));
            }
        }
    }
    let Some((_, feature, threshold)) = best else {
        return at;
    };
    let (l, r): (Vec<usize>, Vec<usize>) = idx
        .iter()
        .partition(|&&i| data.point(i)[feature] <= threshold);
    let left = grow(data, l, max_features, rng, nodes);
    let right = grow(data, r, max_features, rng, nodes);
    nodes[at] = Node::Split {
        feature,
        threshold,
        left,
        right,
    };
    at
}

/// Grows one unpruned CART tree on a bootstrap sample.
pub fn fit_tree(data: &LabeledEmbedding, max_features: usize, seed: u64) -> DecisionTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = data.len();
    let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut nodes = Vec::new();
    grow(data, sample, max_features, &mut rng, &mut nodes);
    DecisionTree { nodes }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
    n_classes: usize,
}

/// Bagged Gini trees with `⌈√d⌉` candidate features per split; tree `t`
/// draws from `seed + t`.
pub fn random_forest_fit(
    train: &LabeledEmbedding,
    n_trees: usize,
    seed: u64,
) -> Result<RandomForest> {
    if n_trees == 0 {
        return Err(Error::InvalidParameter(
            "random forest needs at least one tree".into(),
        ));
    }
    if train.is_empty() {
        return Err(Error::InvalidParameter(
            "random forest needs training points".into(),
        ));
    }
    let max_features = (train.dim as f64).sqrt().ceil() as usize;
    let trees = (0..n_trees)
        .into_par_iter()
        .map(|t| fit_tree(train, max_features, seed.wrapping_add(t as u64)))
        .collect();
    Ok(RandomForest {
        trees,
        n_classes: train.n_classes,
    })
}

impl RandomForest {
    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    /// Majority vote over trees; ties go to the smaller class id.
    pub fn predict(&self, points: &[f64], dim: usize) -> Vec<usize> {
        points
            .chunks(dim)
            .map(|x| {
                let mut votes = vec![0; self.n_classes];
                self.trees.iter().for_each(|t| votes[t.predict_one(x)] += 1);
                majority(&votes)
            })
            .collect()
    }
}

pub fn random_forest_predict(model: &RandomForest, points: &[f64], dim: usize) -> Vec<usize> {
    model.predict(points, dim)
}

/// Fold id per sample. Each class is shuffled and dealt round-robin, with the
/// dealing position carried over from one class to the next.
pub fn stratified_kfold(labels: &[usize], k_folds: usize, seed: u64) -> Result<Vec<usize>> {
    if k_folds < 2 {
        return Err(Error::InvalidParameter("need at least 2 folds".into()));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; labels.len()];
    let mut deal = 0;
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < k_folds {
            return Err(Error::InvalidParameter(format!(
                "class {class} has {} members, fewer than {k_folds} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[i] = deal % k_folds;
            deal += 1;
        }
    }
    Ok(folds)
}

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            n_classes,
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], n_classes: usize) -> Self {
        let mut m = ConfusionMatrix::new(n_classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            m.counts[t][p] += 1;
        }
        m
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if counts.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidParameter(
                "confusion matrix must be square".into(),
            ));
        }
        Ok(ConfusionMatrix {
            n_classes: n,
            counts,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for (row, o) in self.counts.iter_mut().zip(&other.counts) {
            row.iter_mut().zip(o).for_each(|(a, b)| *a += b);
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// One-vs-rest F1 per class; 0 when the class is neither present nor
    /// predicted.
    pub fn per_class_f1(&self) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| {
                let tp = self.counts[c][c] as f64;
                let actual: u64 = self.counts[c].iter().sum();
                let predicted: u64 = self.counts.iter().map(|r| r[c]).sum();
                let denom = (actual + predicted) as f64;
                if denom == 0.0 {
                    log::warn!(
                        "F1 undefined for class {c} (no true or predicted members); using 0"
                    );
                    0.0
                } else {
                    2.0 * tp / denom
                }
            })
            .collect()
    }

    pub fn macro_f1(&self) -> f64 {
        mean(&self.per_class_f1())
    }

    /// Multiclass Matthews correlation from the full matrix.
    pub fn mcc(&self) -> f64 {
        let s = self.total() as f64;
        let correct: f64 = (0..self.n_classes).map(|k| self.counts[k][k] as f64).sum();
        let t: Vec<f64> = self
            .counts
            .iter()
            .map(|r| r.iter().sum::<u64>() as f64)
            .collect();
        let p: Vec<f64> = (0..self.n_classes)
            .map(|k| self.counts.iter().map(|r| r[k]).sum::<u64>() as f64)
            .collect();
        let pt: f64 = p.iter().zip(&t).map(|(a, b)| a * b).sum();
        let pp: f64 = p.iter().map(|a| a * a).sum();
        let tt: f64 = t.iter().map(|a| a * a).sum();
        let denom = ((s * s - pp) * (s * s - tt)).sqrt();
        if denom == 0.0 {
            let diagonal = (0..self.n_classes)
                .all(|i| (0..self.n_classes).all(|j| i == j || self.counts[i][j] == 0));
            return if diagonal && s > 0.0 { 1.0 } else { 0.0 };
        }
        ((correct * s - pt) / denom).clamp(-1.0, 1.0)
    }

    pub fn to_csv_string(&self, class_names: &[String]) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["true\\predicted".to_owned()];
        header.extend(class_names.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (name, row) in class_names.iter().zip(&self.counts) {
            let mut record = vec![name.clone()];
            record.extend(row.iter().map(|c| c.to_string()));
            w.write_record(&record).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "classifier", rename_all = "snake_case")]
pub enum Classifier {
    Knn { k: usize },
    RandomForest { n_trees: usize },
}

impl Classifier {
    pub fn name(&self) -> &'static str {
        match self {
            Classifier::Knn { .. } => "knn",
            Classifier::RandomForest { .. } => "rf",
        }
    }

    pub fn fit_predict(
        &self,
        train: &LabeledEmbedding,
        test: &[f64],
        seed: u64,
    ) -> Result<Vec<usize>> {
        match *self {
            Classifier::Knn { k } => knn_classify(train, test, k),
            Classifier::RandomForest { n_trees } => {
                Ok(random_forest_fit(train, n_trees, seed)?.predict(test, train.dim))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub per_class_f1: Vec<f64>,
    pub macro_f1: f64,
    pub mcc: f64,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    /// Mean over folds.
    pub per_class_f1: Vec<f64>,
    /// Sample standard deviation over folds.
    pub per_class_f1_sd: Vec<f64>,
    pub macro_f1: f64,
    pub mcc: f64,
    pub mcc_sd: f64,
    pub k_folds: usize,
    pub seed: u64,
    pub classifier: Classifier,
    pub reducer: Option<Reducer>,
    pub per_fold: Vec<FoldReport>,
    /// Sum of the per-fold matrices.
    pub confusion: ConfusionMatrix,
}

/// Stratified cross-validation of `classifier` on fixed coordinates.
pub fn cross_validate(
    data: &LabeledEmbedding,
    class_names: &[String],
    classifier: &Classifier,
    k_folds: usize,
    seed: u64,
) -> Result<EvalReport> {
    if class_names.len() != data.n_classes {
        return Err(Error::InvalidParameter(format!(
            "{} class names for {} classes",
            class_names.len(),
            data.n_classes
        )));
    }
    let folds = stratified_kfold(&data.labels, k_folds, derive_seed(seed, "folds"))?;
    let classifier_seed = derive_seed(seed, "classifier");
    let per_fold = (0..k_folds)
        .into_par_iter()
        .map(|f| {
            let (test_idx, train_idx): (Vec<usize>, Vec<usize>) =
                (0..data.len()).partition(|&i| folds[i] == f);
            let train = data.subset(&train_idx);
            let test = data.subset(&test_idx);
            let predicted = classifier.fit_predict(
                &train,
                &test.coords,
                classifier_seed.wrapping_add(f as u64),
            )?;
            let confusion =
                ConfusionMatrix::from_predictions(&test.labels, &predicted, data.n_classes);
            Ok(FoldReport {
                per_class_f1: confusion.per_class_f1(),
                macro_f1: confusion.macro_f1(),
                mcc: confusion.mcc(),
                confusion,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let c = data.n_classes;
    let column = |k: usize| {
        per_fold
            .iter()
            .map(|r| r.per_class_f1[k])
            .collect::<Vec<_>>()
    };
    let per_class_f1: Vec<f64> = (0..c).map(|k| mean(&column(k))).collect();
    let per_class_f1_sd = (0..c).map(|k| sample_sd(&column(k))).collect();
    let mccs: Vec<f64> = per_fold.iter().map(|r| r.mcc).collect();
    let mut confusion = ConfusionMatrix::new(c);
    per_fold.iter().for_each(|r| confusion.add(&r.confusion));
    Ok(EvalReport {
        class_names: class_names.to_vec(),
        macro_f1: mean(&per_class_f1),
        per_class_f1,
        per_class_f1_sd,
        mcc: mean(&mccs),
        mcc_sd: sample_sd(&mccs),
        k_folds,
        seed,
        classifier: classifier.clone(),
        reducer: None,
        per_fold,
        confusion,
    })
}

/// Embeds the labeled matrix once with `reducer` (2 dimensions), then
/// cross-validates `classifier` on the coordinates.
pub fn evaluate(
    m: &DistanceMatrix,
    reducer: &Reducer,
    classifier: &Classifier,
    k_folds: usize,
    seed: u64,
) -> Result<EvalReport> {
    let labels = m.labels().ok_or_else(|| {
        Error::InvalidParameter("evaluation needs a labeled distance matrix".into())
    })?;
    let (ids, names) = encode_labels(labels);
    let embedding = reducer.embed(m, 2, derive_seed(seed, "reducer"))?;
    let data = LabeledEmbedding::from_embedding(&embedding, ids, names.len())?;
    let mut report = cross_validate(&data, &names, classifier, k_folds, seed)?;
    report.reducer = Some(reducer.clone());
    Ok(report)
}
