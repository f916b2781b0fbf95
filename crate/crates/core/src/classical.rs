//! Baseline tile classifiers over mean tile spectra: a bagged random
//! forest and a one-hidden-layer MLP, plus the shared confusion-matrix
//! metrics used to score every model in the pipeline.

use std::io::{Read as IoRead, Write as IoWrite};
use std::path::Path;

use ndarray::Array4;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HsiError, Result};
use crate::nn::{self, Mode, Network, NetworkSpec, TrainConfig, TrainHistory};

/// Binary class codes used throughout: tumor tissue is the positive
/// class.
pub const CLASS_HEALTHY: usize = 0;
pub const CLASS_LGG: usize = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Metrics {
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Confusion counts and derived ratios with the tumor class positive.
/// Ratios with a zero denominator come back as NaN rather than a
/// made-up value.
pub fn evaluate(predictions: &[usize], labels: &[usize]) -> Result<Metrics> {
    if predictions.is_empty() {
        return Err(HsiError::invalid("cannot evaluate an empty prediction set"));
    }
    if predictions.len() != labels.len() {
        return Err(HsiError::shape("prediction/label count mismatch"));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p == CLASS_LGG, y == CLASS_LGG) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(metrics_from_counts(c))
}

pub fn metrics_from_counts(c: ConfusionCounts) -> Metrics {
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            f64::NAN
        } else {
            num as f64 / den as f64
        }
    };
    Metrics {
        counts: c,
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
    }
}

// ---------------------------------------------------------------------
// Random forest
// ---------------------------------------------------------------------

/// One CART node; `feature == u32::MAX` marks a leaf.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TreeNode {
    feature: u32,
    threshold: f64,
    left: u32,
    right: u32,
    /// Majority class at this node (used when it is a leaf).
    label: u8,
}

const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> usize {
        let mut idx = 0usize;
        loop {
            let node = &self.nodes[idx];
            if node.feature == LEAF {
                return node.label as usize;
            }
            idx = if x[node.feature as usize] <= node.threshold {
                node.left as usize
            } else {
                node.right as usize
            };
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomForest {
    pub num_features: usize,
    pub min_leaf: usize,
    trees: Vec<Tree>,
}

fn gini(counts: &[usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p0 = counts[0] as f64 / n;
    let p1 = counts[1] as f64 / n;
    1.0 - p0 * p0 - p1 * p1
}

/// Grow one tree on a bootstrap sample. `indices` are row indices into
/// the full feature matrix.
fn grow_tree(
    features: &[Vec<f64>],
    labels: &[usize],
    indices: Vec<usize>,
    min_leaf: usize,
    features_per_split: usize,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let mut nodes = Vec::new();
    let mut stack: Vec<(usize, Vec<usize>)> = Vec::new();

    let majority = |idx: &[usize]| -> u8 {
        let mut counts = [0usize; 2];
        for &i in idx {
            counts[labels[i]] += 1;
        }
        // ties resolve to the positive class for determinism
        if counts[CLASS_LGG] >= counts[CLASS_HEALTHY] {
            CLASS_LGG as u8
        } else {
            CLASS_HEALTHY as u8
        }
    };

    nodes.push(TreeNode {
        feature: LEAF,
        threshold: 0.0,
        left: 0,
        right: 0,
        label: majority(&indices),
    });
    stack.push((0, indices));

    let num_features = features[0].len();
    let mut feature_pool: Vec<usize> = (0..num_features).collect();

    while let Some((node_idx, idx)) = stack.pop() {
        let mut counts = [0usize; 2];
        for &i in &idx {
            counts[labels[i]] += 1;
        }
        let parent_gini = gini(&counts);
        if parent_gini == 0.0 || idx.len() < 2 * min_leaf {
            continue; // pure or too small to split: stays a leaf
        }

        feature_pool.shuffle(rng);
        let candidates = &feature_pool[..features_per_split.min(num_features)];

        let mut best: Option<(f64, usize, f64)> = None; // (impurity, feature, threshold)
        let mut sorted = idx.clone();
        for &f in candidates {
            sorted.sort_by(|&a, &b| features[a][f].partial_cmp(&features[b][f]).unwrap());
            let mut left = [0usize; 2];
            let mut right = counts;
            for cut in 1..sorted.len() {
                let moved = sorted[cut - 1];
                left[labels[moved]] += 1;
                right[labels[moved]] -= 1;
                let lo = features[sorted[cut - 1]][f];
                let hi = features[sorted[cut]][f];
                if lo == hi || cut < min_leaf || sorted.len() - cut < min_leaf {
                    continue;
                }
                let n = sorted.len() as f64;
                let impurity =
                    (cut as f64 / n) * gini(&left) + ((n - cut as f64) / n) * gini(&right);
                let better = best.map_or(true, |(b, _, _)| impurity < b);
                if better {
                    best = Some((impurity, f, 0.5 * (lo + hi)));
                }
            }
        }
        let Some((impurity, feature, threshold)) = best else {
            continue;
        };
        if impurity >= parent_gini {
            continue; // no improving split
        }
        let (li, ri): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| features[i][feature] <= threshold);
        let left_id = nodes.len() as u32;
        nodes.push(TreeNode {
            feature: LEAF,
            threshold: 0.0,
            left: 0,
            right: 0,
            label: majority(&li),
        });
        let right_id = nodes.len() as u32;
        nodes.push(TreeNode {
            feature: LEAF,
            threshold: 0.0,
            left: 0,
            right: 0,
            label: majority(&ri),
        });
        let node = &mut nodes[node_idx];
        node.feature = feature as u32;
        node.threshold = threshold;
        node.left = left_id;
        node.right = right_id;
        stack.push((right_id as usize, ri));
        stack.push((left_id as usize, li));
    }
    Tree { nodes }
}

/// Bagged CART forest: Gini criterion, sqrt(C) candidate features per
/// split, minimum leaf size 2 by default. Trees are grown in parallel
/// from per-tree seeds derived from the master seed, so results do not
/// depend on scheduling.
pub fn rf_train(
    features: &[Vec<f64>],
    labels: &[usize],
    trees: usize,
    min_leaf: usize,
    seed: u64,
) -> Result<RandomForest> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(HsiError::shape("feature/label count mismatch or empty set"));
    }
    if trees == 0 {
        return Err(HsiError::invalid("forest needs at least one tree"));
    }
    let num_features = features[0].len();
    if features.iter().any(|f| f.len() != num_features) {
        return Err(HsiError::shape("inconsistent feature vector lengths"));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(HsiError::numeric("non-finite feature values"));
    }
    let classes: std::collections::BTreeSet<usize> = labels.iter().cloned().collect();
    if classes.len() < 2 {
        return Err(HsiError::invalid("training set contains a single class"));
    }
    if classes.iter().any(|&c| c > 1) {
        return Err(HsiError::invalid("labels must be binary (0/1)"));
    }

    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let tree_seeds: Vec<u64> = (0..trees).map(|_| master.gen()).collect();
    let features_per_split = (num_features as f64).sqrt().round().max(1.0) as usize;
    let n = features.len();

    let grown: Vec<Tree> = tree_seeds
        .par_iter()
        .map(|&ts| {
            let mut rng = ChaCha8Rng::seed_from_u64(ts);
            let sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            grow_tree(features, labels, sample, min_leaf, features_per_split, &mut rng)
        })
        .collect();

    Ok(RandomForest {
        num_features,
        min_leaf,
        trees: grown,
    })
}

impl RandomForest {
    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    /// Hard votes from every individual tree, exposed so callers can
    /// recount the vote fraction independently.
    pub fn tree_votes(&self, x: &[f64]) -> Result<Vec<usize>> {
        if x.len() != self.num_features {
            return Err(HsiError::shape(format!(
                "expected {} features, got {}",
                self.num_features,
                x.len()
            )));
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).collect())
    }

    /// Majority vote; the probability is the fraction of trees voting
    /// for the tumor class, with a tie at exactly 0.5 resolving to it.
    pub fn predict(&self, x: &[f64]) -> Result<(usize, f64)> {
        let votes = self.tree_votes(x)?;
        let positive = votes.iter().filter(|&&v| v == CLASS_LGG).count();
        let prob = positive as f64 / votes.len() as f64;
        let label = if prob >= 0.5 { CLASS_LGG } else { CLASS_HEALTHY };
        Ok((label, prob))
    }

    pub fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<(usize, f64)>> {
        xs.par_iter().map(|x| self.predict(x)).collect()
    }

    /// Serialize to the forest container: magic, version, JSON body.
    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_vec(self)
            .map_err(|e| HsiError::format(format!("forest serialization failed: {e}")))?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(b"HSIF")?;
        f.write_all(&1u16.to_le_bytes())?;
        f.write_all(&(body.len() as u64).to_le_bytes())?;
        f.write_all(&body)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)?;
        if &magic != b"HSIF" {
            return Err(HsiError::format("not a forest container"));
        }
        let mut b2 = [0u8; 2];
        f.read_exact(&mut b2)?;
        if u16::from_le_bytes(b2) != 1 {
            return Err(HsiError::format("unsupported forest version"));
        }
        let mut b8 = [0u8; 8];
        f.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8) as usize;
        let mut body = vec![0u8; len];
        f.read_exact(&mut body)
            .map_err(|_| HsiError::format("forest payload truncated"))?;
        serde_json::from_slice(&body)
            .map_err(|e| HsiError::format(format!("bad forest body: {e}")))
    }
}

// ---------------------------------------------------------------------
// MLP baseline
// ---------------------------------------------------------------------

/// One-hidden-layer softmax classifier over feature vectors, trained
/// with the shared network engine.
pub fn mlp_train(
    features: &[Vec<f64>],
    labels: &[usize],
    hidden_units: usize,
    cfg: &TrainConfig,
) -> Result<(Network, TrainHistory)> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(HsiError::shape("feature/label count mismatch or empty set"));
    }
    let c = features[0].len();
    let x = features_to_tensor(features, c)?;
    let spec = NetworkSpec::mlp(c, &[hidden_units], 2);
    nn::train(&spec, &x, labels, cfg)
}

pub fn mlp_predict(net: &Network, features: &[Vec<f64>]) -> Result<Vec<(usize, f64)>> {
    if features.is_empty() {
        return Ok(vec![]);
    }
    let c = features[0].len();
    let x = features_to_tensor(features, c)?;
    let probs = net.forward(&x, Mode::Eval)?;
    let preds = Network::argmax(&probs);
    Ok(preds
        .into_iter()
        .enumerate()
        .map(|(i, p)| (p, probs[[i, 0, 0, CLASS_LGG]]))
        .collect())
}

fn features_to_tensor(features: &[Vec<f64>], c: usize) -> Result<nn::Tensor> {
    let mut x = Array4::zeros((features.len(), 1, 1, c));
    for (i, f) in features.iter().enumerate() {
        if f.len() != c {
            return Err(HsiError::shape("inconsistent feature vector lengths"));
        }
        for (j, &v) in f.iter().enumerate() {
            x[[i, 0, 0, j]] = v;
        }
    }
    Ok(x)
}
