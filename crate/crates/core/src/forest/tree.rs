use ndarray::{ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Criterion;
use crate::seed;

/// A node of a fitted CART tree. Internal nodes keep their in-bag class
/// counts so a tree can be read back at any shallower depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        class_counts: Vec<u32>,
        majority: usize,
    },
    Leaf {
        class_counts: Vec<u32>,
        predicted: usize,
    },
}

impl TreeNode {
    pub fn class_counts(&self) -> &[u32] {
        match self {
            TreeNode::Split { class_counts, .. } | TreeNode::Leaf { class_counts, .. } => class_counts,
        }
    }

    /// Majority class index of the in-bag samples reaching this node.
    pub fn majority(&self) -> usize {
        match self {
            TreeNode::Split { majority, .. } => *majority,
            TreeNode::Leaf { predicted, .. } => *predicted,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf { .. })
    }
}

/// Nodes in pre-order; node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
}

/// Growth controls for a single tree.
#[derive(Clone, Copy, Debug)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    /// Number of non-constant candidate features examined per node.
    pub max_features: usize,
    pub criterion: Criterion,
    pub min_samples_leaf: usize,
}

/// Argmax with ties resolved to the lowest index.
pub(crate) fn argmax_counts<T: PartialOrd + Copy>(counts: &[T]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate().skip(1) {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

pub fn gini(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / total).powi(2)).sum::<f64>()
}

/// Shannon entropy in bits.
pub fn entropy(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|c| {
            let p = c / total;
            -p * p.log2()
        })
        .sum()
}

impl Criterion {
    pub fn impurity(self, counts: &[f64]) -> f64 {
        match self {
            Criterion::Gini => gini(counts),
            Criterion::Entropy => entropy(counts),
        }
    }
}

const ROOT_TAG: u64 = 0x2007;

impl DecisionTree {
    pub fn from_nodes(nodes: Vec<TreeNode>) -> Self {
        DecisionTree { nodes }
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Terminal node id reached by `x`.
    pub fn leaf_of(&self, x: ArrayView1<'_, f64>) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { .. } => return i,
                TreeNode::Split { feature, threshold, left, right, .. } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn predict_index(&self, x: ArrayView1<'_, f64>) -> usize {
        self.nodes[self.leaf_of(x)].majority()
    }

    /// Prediction of the same tree grown with `max_depth = limit`.
    pub fn predict_index_at_depth(&self, x: ArrayView1<'_, f64>, limit: Option<usize>) -> usize {
        let mut i = 0;
        let mut depth = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { predicted, .. } => return *predicted,
                TreeNode::Split { feature, threshold, left, right, majority, .. } => {
                    if limit.is_some_and(|l| depth >= l) {
                        return *majority;
                    }
                    i = if x[*feature] <= *threshold { *left } else { *right };
                    depth += 1;
                }
            }
        }
    }
}

struct Candidate {
    score: f64,
    feature: usize,
    threshold: f64,
}

impl Candidate {
    /// Lower impurity wins; exact ties go to the lower feature index and
    /// then the lower threshold.
    fn beats(&self, other: &Candidate) -> bool {
        (self.score, self.feature, self.threshold)
            .partial_cmp(&(other.score, other.feature, other.threshold))
            .is_some_and(|o| o == std::cmp::Ordering::Less)
    }
}

/// Grows one CART tree on the in-bag samples (those with nonzero
/// multiplicity), weighting every sample by its multiplicity.
///
/// Each node draws its candidate features from its own RNG stream derived
/// from `tree_seed` and the node's path, so a depth-limited tree is exactly
/// the truncation of the unlimited tree grown from the same seed.
pub fn fit_tree(
    features: ArrayView2<'_, f64>,
    classes: &[usize],
    n_classes: usize,
    multiplicities: &[u32],
    params: &TreeParams,
    tree_seed: u64,
) -> DecisionTree {
    let samples: Vec<usize> = (0..features.nrows()).filter(|&i| multiplicities[i] > 0).collect();
    let mut grower = Grower {
        features,
        classes,
        n_classes,
        weights: multiplicities,
        params,
        nodes: Vec::new(),
        scratch: Vec::new(),
    };
    grower.grow(samples, 0, seed::derive(tree_seed, ROOT_TAG));
    DecisionTree { nodes: grower.nodes }
}

struct Grower<'a> {
    features: ArrayView2<'a, f64>,
    classes: &'a [usize],
    n_classes: usize,
    weights: &'a [u32],
    params: &'a TreeParams,
    nodes: Vec<TreeNode>,
    scratch: Vec<(f64, usize, u32)>,
}

impl Grower<'_> {
    fn grow(&mut self, samples: Vec<usize>, depth: usize, node_seed: u64) -> usize {
        let mut counts = vec![0u32; self.n_classes];
        for &i in &samples {
            counts[self.classes[i]] += self.weights[i];
        }
        let majority = argmax_counts(&counts);
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { class_counts: counts.clone(), predicted: majority });

        let total: u32 = counts.iter().sum();
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_reached = self.params.max_depth.is_some_and(|d| depth >= d);
        let msl = self.params.min_samples_leaf as u32;
        if pure || depth_reached || total < 2 * msl {
            return id;
        }

        let Some(best) = self.best_split(&samples, &counts, node_seed) else {
            return id;
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            samples.into_iter().partition(|&i| self.features[[i, best.feature]] <= best.threshold);
        let l = self.grow(left, depth + 1, seed::derive(node_seed, 1));
        let r = self.grow(right, depth + 1, seed::derive(node_seed, 2));
        self.nodes[id] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: l,
            right: r,
            class_counts: counts,
            majority,
        };
        id
    }

    fn best_split(&mut self, samples: &[usize], counts: &[u32], node_seed: u64) -> Option<Candidate> {
        let d = self.features.ncols();
        let crit = self.params.criterion;
        let msl = self.params.min_samples_leaf as f64;
        let parent: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let total: f64 = parent.iter().sum();
        let parent_score = total * crit.impurity(&parent);

        let mut rng = seed::rng(node_seed);
        let mut order: Vec<usize> = (0..d).collect();
        let mut best: Option<Candidate> = None;
        let mut examined = 0;
        let mut left = vec![0.0; self.n_classes];
        let mut right = vec![0.0; self.n_classes];

        // Lazy Fisher-Yates: features that are constant within the node do
        // not count towards max_features.
        for slot in 0..d {
            if examined >= self.params.max_features {
                break;
            }
            let pick = rng.random_range(slot..d);
            order.swap(slot, pick);
            let f = order[slot];

            self.scratch.clear();
            self.scratch.extend(samples.iter().map(|&i| (self.features[[i, f]], self.classes[i], self.weights[i])));
            self.scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
            let lo = self.scratch[0].0;
            let hi = self.scratch[self.scratch.len() - 1].0;
            if lo == hi {
                continue;
            }
            examined += 1;

            left.iter_mut().for_each(|v| *v = 0.0);
            right.copy_from_slice(&parent);
            let mut wl = 0.0;
            for p in 0..self.scratch.len() - 1 {
                let (v, c, w) = self.scratch[p];
                let w = w as f64;
                left[c] += w;
                right[c] -= w;
                wl += w;
                let next = self.scratch[p + 1].0;
                if next == v {
                    continue;
                }
                let wr = total - wl;
                if wl < msl || wr < msl {
                    continue;
                }
                let score = wl * crit.impurity(&left) + wr * crit.impurity(&right);
                let mut threshold = 0.5 * (v + next);
                if threshold >= next {
                    threshold = v;
                }
                let cand = Candidate { score, feature: f, threshold };
                if best.as_ref().is_none_or(|b| cand.beats(b)) {
                    best = Some(cand);
                }
            }
        }
        best.filter(|b| b.score < parent_score - 1e-12 * total.max(1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn params(max_features: usize) -> TreeParams {
        TreeParams { max_depth: None, max_features, criterion: Criterion::Gini, min_samples_leaf: 1 }
    }

    #[test]
    fn impurity_values() {
        assert!((gini(&[2.0, 2.0]) - 0.5).abs() < 1e-15);
        assert!((entropy(&[2.0, 2.0]) - 1.0).abs() < 1e-15);
        assert_eq!(gini(&[4.0, 0.0]), 0.0);
        assert_eq!(entropy(&[0.0, 3.0]), 0.0);
    }

    #[test]
    fn single_sample_is_leaf() {
        let x = array![[0.0], [1.0], [2.0]];
        let t = fit_tree(x.view(), &[0, 1, 1], 2, &[0, 3, 0], &params(1), 1);
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.predict_index(x.row(0)), 1);
    }

    #[test]
    fn pure_input_is_leaf() {
        let x = array![[0.0, 5.0], [1.0, 2.0], [2.0, 9.0]];
        let t = fit_tree(x.view(), &[1, 1, 1], 2, &[1, 1, 1], &params(2), 1);
        assert_eq!(t.nodes().len(), 1);
    }

    #[test]
    fn separates_two_groups() {
        let x = array![[0.0], [1.0], [10.0], [11.0]];
        let t = fit_tree(x.view(), &[0, 0, 1, 1], 2, &[1, 1, 1, 1], &params(1), 3);
        assert_eq!(t.nodes().len(), 3);
        match &t.nodes()[0] {
            TreeNode::Split { threshold, .. } => assert!(*threshold > 1.0 && *threshold < 10.0),
            other => panic!("expected split, got {other:?}"),
        }
        assert!(t.nodes()[1].is_leaf() && t.nodes()[2].is_leaf());
    }

    #[test]
    fn truncation_matches_depth_limited_growth() {
        let n = 60;
        let x = Array2::from_shape_fn((n, 3), |(i, k)| ((i * 7 + k * 13) % 17) as f64 + 0.1 * k as f64);
        let y: Vec<usize> = (0..n).map(|i| (i * 5 % 11) % 3).collect();
        let w = vec![1u32; n];
        let full = fit_tree(x.view(), &y, 3, &w, &params(2), 99);
        for limit in 0..5 {
            let p = TreeParams { max_depth: Some(limit), ..params(2) };
            let shallow = fit_tree(x.view(), &y, 3, &w, &p, 99);
            assert!(shallow.depth() <= limit);
            for i in 0..n {
                assert_eq!(shallow.predict_index(x.row(i)), full.predict_index_at_depth(x.row(i), Some(limit)));
            }
        }
    }

    #[test]
    fn min_samples_leaf_respected() {
        let x = Array2::from_shape_fn((20, 1), |(i, _)| i as f64);
        let y: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let p = TreeParams { min_samples_leaf: 4, ..params(1) };
        let t = fit_tree(x.view(), &y, 2, &[1; 20], &p, 0);
        for node in t.nodes() {
            if node.is_leaf() {
                assert!(node.class_counts().iter().sum::<u32>() >= 4);
            }
        }
    }

    #[test]
    fn leaf_counts_positive_and_majority_consistent() {
        let x = Array2::from_shape_fn((40, 2), |(i, k)| ((i * (k + 3)) % 7) as f64);
        let y: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let t = fit_tree(x.view(), &y, 3, &[2; 40], &params(1), 5);
        for node in t.nodes() {
            let c = node.class_counts();
            assert!(c.iter().sum::<u32>() > 0);
            assert_eq!(node.majority(), argmax_counts(c));
        }
    }
}
