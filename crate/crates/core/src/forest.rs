//! Random forest classifier: CART trees grown on bootstrap samples with
//! Gini impurity and per-node feature subsampling, majority vote by mean
//! leaf frequencies.
//!
//! Determinism: every tree draws from its own stream keyed by
//! `(seed, tree index)`, so tree-level parallelism (driven externally)
//! cannot reorder randomness.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use core::fmt;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::dataset::InstanceTable;
use crate::math;
use crate::rng::{purpose, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MaxFeatures {
    /// ceil(sqrt(F)) features resampled at every node.
    Sqrt,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ForestConfig {
    pub n_estimators: usize,
    pub seed: u64,
    pub max_features: MaxFeatures,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_estimators: 100,
            seed: 42,
            max_features: MaxFeatures::Sqrt,
            max_depth: None,
            min_samples_split: 2,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ForestError {
    SingleClass,
    EmptyCounts,
    ShapeMismatch { expected: usize, got: usize },
}

impl fmt::Display for ForestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ForestError::SingleClass => write!(f, "training data has a single class"),
            ForestError::EmptyCounts => write!(f, "empty class counts"),
            ForestError::ShapeMismatch { expected, got } => {
                write!(f, "forest trained on {expected} features, rows have {got}")
            }
        }
    }
}

impl core::error::Error for ForestError {}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        /// Training rows per class, `[class 0, class 1]`.
        counts: [usize; 2],
    },
}

impl TreeNode {
    fn leaf_for(&self, row: &[f64]) -> &[usize; 2] {
        match self {
            TreeNode::Leaf { counts } => counts,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if row[*feature] <= *threshold {
                    left.leaf_for(row)
                } else {
                    right.leaf_for(row)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Forest {
    pub config: ForestConfig,
    pub n_features: usize,
    pub trees: Vec<TreeNode>,
}

/// `1 - sum (n_c / N)^2` over per-class counts.
pub fn gini_impurity(counts: &[usize]) -> Result<f64, ForestError> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(ForestError::EmptyCounts);
    }
    let total = total as f64;
    let sum_sq: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            p * p
        })
        .sum();
    Ok(1.0 - sum_sq)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub decrease: f64,
}

/// Exhaustive scan over candidate thresholds (midpoints of consecutive
/// distinct sorted values) within `feature_subset`, maximizing weighted
/// Gini decrease. Ties break to (lower feature index, lower threshold);
/// `None` when no split reduces impurity.
pub fn best_split(
    features: &[f64],
    n_features: usize,
    labels: &[u8],
    row_indices: &[usize],
    feature_subset: &[usize],
) -> Option<SplitCandidate> {
    let n = row_indices.len();
    let mut total = [0usize; 2];
    for &i in row_indices {
        total[labels[i] as usize] += 1;
    }
    let parent = gini_impurity(&total).ok()?;
    if parent == 0.0 {
        return None;
    }
    let mut subset: Vec<usize> = feature_subset.to_vec();
    subset.sort_unstable();

    let mut best: Option<SplitCandidate> = None;
    let mut column: Vec<(f64, u8)> = Vec::with_capacity(n);
    for &f in &subset {
        column.clear();
        column.extend(
            row_indices
                .iter()
                .map(|&i| (features[i * n_features + f], labels[i])),
        );
        column.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = [0usize; 2];
        let mut right = total;
        for w in 0..n - 1 {
            let (value, label) = column[w];
            left[label as usize] += 1;
            right[label as usize] -= 1;
            let next = column[w + 1].0;
            if next == value {
                continue;
            }
            let threshold = value + (next - value) / 2.0;
            let n_left = (w + 1) as f64;
            let n_right = (n - w - 1) as f64;
            let child = (n_left * gini_impurity(&left).unwrap()
                + n_right * gini_impurity(&right).unwrap())
                / n as f64;
            let decrease = parent - child;
            if decrease > 1e-12 {
                let better = match &best {
                    None => true,
                    Some(b) => decrease > b.decrease,
                };
                if better {
                    best = Some(SplitCandidate {
                        feature: f,
                        threshold,
                        decrease,
                    });
                }
            }
        }
    }
    best
}

/// Deterministic per-tree stream.
pub(crate) fn tree_rng(seed: u64, tree_index: usize) -> ChaCha12Rng {
    stream(seed, purpose::TREE, tree_index as u64)
}

/// Bootstrap sample (n draws with replacement) from the tree's stream.
pub fn bootstrap_indices(seed: u64, tree_index: usize, n_rows: usize) -> Vec<usize> {
    let mut rng = tree_rng(seed, tree_index);
    (0..n_rows).map(|_| rng.gen_range(0..n_rows)).collect()
}

fn subset_size(cfg: &ForestConfig, n_features: usize) -> usize {
    match cfg.max_features {
        MaxFeatures::All => n_features,
        MaxFeatures::Sqrt => {
            let s = math::sqrt(n_features as f64);
            let mut m = s as usize;
            if (m as f64) < s {
                m += 1;
            }
            m.clamp(1, n_features)
        }
    }
}

/// Grow one tree. The bootstrap draw and all per-node feature subsets come
/// from the stream keyed by `(cfg.seed, tree_index)`.
pub fn fit_tree(table: &InstanceTable, cfg: &ForestConfig, tree_index: usize) -> TreeNode {
    let n = table.n_rows();
    let mut rng = tree_rng(cfg.seed, tree_index);
    let indices: Vec<usize> = if cfg.bootstrap {
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let m = subset_size(cfg, table.n_features());
    let mut all_features: Vec<usize> = (0..table.n_features()).collect();
    grow(table, cfg, &mut rng, indices, 0, m, &mut all_features)
}

fn grow(
    table: &InstanceTable,
    cfg: &ForestConfig,
    rng: &mut ChaCha12Rng,
    indices: Vec<usize>,
    depth: usize,
    subset_len: usize,
    feature_pool: &mut Vec<usize>,
) -> TreeNode {
    let mut counts = [0usize; 2];
    for &i in &indices {
        counts[table.labels()[i] as usize] += 1;
    }
    let depth_capped = cfg.max_depth.is_some_and(|d| depth >= d);
    if counts[0] == 0 || counts[1] == 0 || indices.len() < cfg.min_samples_split || depth_capped {
        return TreeNode::Leaf { counts };
    }
    // partial Fisher-Yates: first subset_len entries are the node's subset
    let n_features = feature_pool.len();
    if subset_len < n_features {
        for slot in 0..subset_len {
            let pick = rng.gen_range(slot..n_features);
            feature_pool.swap(slot, pick);
        }
    }
    let subset: Vec<usize> = feature_pool[..subset_len.min(n_features)].to_vec();
    let Some(split) = best_split(
        table.features(),
        table.n_features(),
        table.labels(),
        &indices,
        &subset,
    ) else {
        return TreeNode::Leaf { counts };
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
        .into_iter()
        .partition(|&i| table.row(i)[split.feature] <= split.threshold);
    debug_assert!(!left_idx.is_empty() && !right_idx.is_empty());
    let left = grow(table, cfg, rng, left_idx, depth + 1, subset_len, feature_pool);
    let right = grow(table, cfg, rng, right_idx, depth + 1, subset_len, feature_pool);
    TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(left),
        right: Box::new(right),
    }
}

/// Fit `n_estimators` trees sequentially in index order.
pub fn fit_forest(table: &InstanceTable, cfg: &ForestConfig) -> Result<Forest, ForestError> {
    let counts = table.class_counts();
    if counts[0] == 0 || counts[1] == 0 {
        return Err(ForestError::SingleClass);
    }
    let trees = (0..cfg.n_estimators)
        .map(|i| fit_tree(table, cfg, i))
        .collect();
    Ok(Forest {
        config: *cfg,
        n_features: table.n_features(),
        trees,
    })
}

impl Forest {
    /// Assemble from externally grown trees (must be in index order).
    pub fn from_trees(config: ForestConfig, n_features: usize, trees: Vec<TreeNode>) -> Self {
        Forest {
            config,
            n_features,
            trees,
        }
    }

    /// Per-row class probabilities: mean over trees of leaf frequencies.
    pub fn predict_proba(&self, features: &[f64], n_features: usize) -> Result<Vec<[f64; 2]>, ForestError> {
        if n_features != self.n_features {
            return Err(ForestError::ShapeMismatch {
                expected: self.n_features,
                got: n_features,
            });
        }
        let n = features.len() / n_features;
        let mut out = vec![[0.0f64; 2]; n];
        for tree in &self.trees {
            for (r, probs) in out.iter_mut().enumerate() {
                let counts = tree.leaf_for(&features[r * n_features..(r + 1) * n_features]);
                let total = (counts[0] + counts[1]) as f64;
                probs[0] += counts[0] as f64 / total;
                probs[1] += counts[1] as f64 / total;
            }
        }
        let k = self.trees.len() as f64;
        for p in &mut out {
            p[0] /= k;
            p[1] /= k;
        }
        Ok(out)
    }

    /// Majority-vote labels; a tie goes to class 0.
    pub fn predict(&self, features: &[f64], n_features: usize) -> Result<Vec<u8>, ForestError> {
        Ok(self
            .predict_proba(features, n_features)?
            .into_iter()
            .map(|p| u8::from(p[1] > p[0]))
            .collect())
    }

    pub fn predict_table(&self, table: &InstanceTable) -> Result<Vec<u8>, ForestError> {
        self.predict(table.features(), table.n_features())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use crate::dataset::{synth_generate, split_stratified, SynthConfig};

    fn table(rows: &[(&[f64], u8)]) -> InstanceTable {
        let f = rows[0].0.len();
        let names = (0..f).map(|i| format!("f{i}")).collect();
        let mut t = InstanceTable::empty(names);
        for (row, label) in rows {
            t.push_row(row, *label);
        }
        t
    }

    #[test]
    fn gini_known_values() {
        assert_eq!(gini_impurity(&[10, 0]).unwrap(), 0.0);
        assert_eq!(gini_impurity(&[5, 5]).unwrap(), 0.5);
        assert!((gini_impurity(&[3, 1]).unwrap() - 0.375).abs() < 1e-15);
        assert_eq!(gini_impurity(&[0, 0]).unwrap_err(), ForestError::EmptyCounts);
    }

    #[test]
    fn best_split_enumerable_case() {
        let t = table(&[(&[1.0], 0), (&[2.0], 0), (&[9.0], 1), (&[10.0], 1)]);
        let s = best_split(t.features(), 1, t.labels(), &[0, 1, 2, 3], &[0]).unwrap();
        assert_eq!(s.feature, 0);
        assert!((s.threshold - 5.5).abs() < 1e-12);
        assert!((s.decrease - 0.5).abs() < 1e-12);
    }

    #[test]
    fn best_split_none_on_constant_or_pure() {
        let constant = table(&[(&[3.0], 0), (&[3.0], 1), (&[3.0], 0)]);
        assert_eq!(
            best_split(constant.features(), 1, constant.labels(), &[0, 1, 2], &[0]),
            None
        );
        let pure = table(&[(&[1.0], 1), (&[2.0], 1)]);
        assert_eq!(best_split(pure.features(), 1, pure.labels(), &[0, 1], &[0]), None);
    }

    /// Brute force over every midpoint threshold of every feature.
    fn brute_force_split(t: &InstanceTable, idx: &[usize], subset: &[usize]) -> Option<SplitCandidate> {
        let mut total = [0usize; 2];
        for &i in idx {
            total[t.labels()[i] as usize] += 1;
        }
        let parent = gini_impurity(&total).ok()?;
        let mut subset = subset.to_vec();
        subset.sort_unstable();
        let mut best: Option<SplitCandidate> = None;
        for &f in &subset {
            let mut vals: Vec<f64> = idx.iter().map(|&i| t.row(i)[f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let thr = w[0] + (w[1] - w[0]) / 2.0;
                let mut left = [0usize; 2];
                let mut right = [0usize; 2];
                for &i in idx {
                    if t.row(i)[f] <= thr {
                        left[t.labels()[i] as usize] += 1;
                    } else {
                        right[t.labels()[i] as usize] += 1;
                    }
                }
                let nl: usize = left.iter().sum();
                let nr: usize = right.iter().sum();
                let child = (nl as f64 * gini_impurity(&left).unwrap()
                    + nr as f64 * gini_impurity(&right).unwrap())
                    / idx.len() as f64;
                let dec = parent - child;
                if dec > 1e-12 && best.as_ref().is_none_or(|b| dec > b.decrease) {
                    best = Some(SplitCandidate {
                        feature: f,
                        threshold: thr,
                        decrease: dec,
                    });
                }
            }
        }
        best
    }

    #[test]
    fn best_split_matches_brute_force() {
        let mut rng = crate::rng::stream(1, crate::rng::purpose::SYNTH, 3);
        for trial in 0..30 {
            let n = 12;
            let f = 3;
            let mut t = InstanceTable::empty((0..f).map(|i| format!("f{i}")).collect());
            for _ in 0..n {
                let row: alloc::vec::Vec<f64> =
                    (0..f).map(|_| (rng.gen_range(0..6) as f64) / 2.0).collect();
                t.push_row(&row, rng.gen_range(0..2) as u8);
            }
            let idx: alloc::vec::Vec<usize> = (0..n).collect();
            let got = best_split(t.features(), f, t.labels(), &idx, &[0, 1, 2]);
            let want = brute_force_split(&t, &idx, &[0, 1, 2]);
            match (got, want) {
                (None, None) => {}
                (Some(g), Some(w)) => {
                    assert_eq!(g.feature, w.feature, "trial {trial}");
                    assert!((g.threshold - w.threshold).abs() < 1e-12, "trial {trial}");
                    assert!((g.decrease - w.decrease).abs() < 1e-12, "trial {trial}");
                }
                other => panic!("trial {trial}: {other:?}"),
            }
        }
    }

    #[test]
    fn single_full_tree_memorizes_a_separable_set() {
        let t = table(&[
            (&[0.0, 0.0], 0),
            (&[0.0, 1.0], 0),
            (&[5.0, 0.0], 1),
            (&[5.0, 1.0], 1),
        ]);
        let cfg = ForestConfig {
            n_estimators: 1,
            max_features: MaxFeatures::All,
            bootstrap: false,
            ..ForestConfig::default()
        };
        let forest = fit_forest(&t, &cfg).unwrap();
        assert_eq!(forest.predict_table(&t).unwrap(), t.labels());
    }

    #[test]
    fn fully_grown_tree_is_pure_on_its_bootstrap_sample() {
        let mut rng = crate::rng::stream(8, crate::rng::purpose::SYNTH, 4);
        let f = 4;
        let mut t = InstanceTable::empty((0..f).map(|i| format!("f{i}")).collect());
        for i in 0..60 {
            // continuous draws: duplicate feature vectors have probability zero
            let row: alloc::vec::Vec<f64> = (0..f).map(|_| rng.gen::<f64>()).collect();
            t.push_row(&row, (i % 2) as u8);
        }
        let cfg = ForestConfig {
            n_estimators: 3,
            ..ForestConfig::default()
        };
        for tree_index in 0..cfg.n_estimators {
            let tree = fit_tree(&t, &cfg, tree_index);
            let sample = bootstrap_indices(cfg.seed, tree_index, t.n_rows());
            for &i in &sample {
                let counts = tree.leaf_for(t.row(i));
                let pred = u8::from(counts[1] > counts[0]);
                assert_eq!(pred, t.labels()[i], "tree {tree_index} row {i}");
            }
        }
    }

    #[test]
    fn forest_is_deterministic() {
        let cfg = SynthConfig::new(100, 5, 2.0, 1.0, 3);
        let data = synth_generate(&cfg);
        let fc = ForestConfig {
            n_estimators: 11,
            ..ForestConfig::default()
        };
        let a = fit_forest(&data, &fc).unwrap();
        let b = fit_forest(&data, &fc).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forest_separates_synthetic_classes() {
        let data = synth_generate(&SynthConfig::new(500, 19, 4.0, 1.0, 42));
        let split = split_stratified(&data, 0.7, 42).unwrap();
        let forest = fit_forest(&split.train, &ForestConfig::default()).unwrap();
        let pred = forest.predict_table(&split.test).unwrap();
        let correct = pred
            .iter()
            .zip(split.test.labels())
            .filter(|(a, b)| a == b)
            .count();
        let acc = correct as f64 / pred.len() as f64;
        assert!(acc >= 0.95, "accuracy {acc}");
    }

    #[test]
    fn predict_probabilities_are_normalized() {
        let data = synth_generate(&SynthConfig::new(80, 4, 1.0, 1.0, 9));
        let forest = fit_forest(
            &data,
            &ForestConfig {
                n_estimators: 7,
                ..ForestConfig::default()
            },
        )
        .unwrap();
        for p in forest.predict_proba(data.features(), 4).unwrap() {
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
            assert!(p[0] >= 0.0 && p[1] >= 0.0);
        }
    }

    #[test]
    fn three_pure_trees_vote_two_thirds() {
        let leaf = |c0: usize, c1: usize| TreeNode::Leaf { counts: [c0, c1] };
        let forest = Forest::from_trees(
            ForestConfig::default(),
            1,
            alloc::vec![leaf(0, 4), leaf(0, 2), leaf(3, 0)],
        );
        let probs = forest.predict_proba(&[0.5], 1).unwrap();
        assert!((probs[0][1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(forest.predict(&[0.5], 1).unwrap(), alloc::vec![1]);
    }

    #[test]
    fn tie_goes_to_class_zero() {
        let leaf = |c0: usize, c1: usize| TreeNode::Leaf { counts: [c0, c1] };
        let forest = Forest::from_trees(
            ForestConfig::default(),
            1,
            alloc::vec![leaf(1, 0), leaf(0, 1)],
        );
        assert_eq!(forest.predict(&[0.0], 1).unwrap(), alloc::vec![0]);
    }

    #[test]
    fn rejects_single_class() {
        let t = table(&[(&[1.0], 1), (&[2.0], 1)]);
        assert_eq!(
            fit_forest(&t, &ForestConfig::default()).unwrap_err(),
            ForestError::SingleClass
        );
    }

    #[test]
    fn single_full_tree_probabilities_are_pure() {
        let t = table(&[(&[0.0], 0), (&[1.0], 0), (&[5.0], 1), (&[6.0], 1)]);
        let cfg = ForestConfig {
            n_estimators: 1,
            max_features: MaxFeatures::All,
            bootstrap: false,
            ..ForestConfig::default()
        };
        let forest = fit_forest(&t, &cfg).unwrap();
        for p in forest.predict_proba(t.features(), 1).unwrap() {
            assert!(p[0] == 0.0 || p[0] == 1.0, "{p:?}");
        }
    }

    #[test]
    fn predict_rejects_wrong_width() {
        let t = table(&[(&[0.0, 1.0], 0), (&[5.0, 2.0], 1)]);
        let forest = fit_forest(
            &t,
            &ForestConfig {
                n_estimators: 1,
                ..ForestConfig::default()
            },
        )
        .unwrap();
        assert_eq!(
            forest.predict(&[1.0, 2.0, 3.0], 3).unwrap_err(),
            ForestError::ShapeMismatch {
                expected: 2,
                got: 3
            }
        );
    }
}
