use std::collections::BTreeMap;

use ndarray::{array, Array2};
use osrf::dataset::{standardize, Dataset};
use osrf::forest::{
    fit_forest, fit_tree, grid_search_cv, stratified_folds, Criterion, ForestConfig, ForestGrid, MaxFeatures,
    TreeNode, TreeParams,
};
use osrf::pipeline::{prepare_split, Experiment, ExperimentConfig};
use osrf::ClassId;
use proptest::prelude::*;

fn dataset(features: Array2<f64>, labels: &[u32]) -> Dataset {
    let d = features.ncols();
    let names: BTreeMap<ClassId, String> =
        labels.iter().map(|&l| (ClassId(l), format!("c{l}"))).collect();
    Dataset::new(
        features,
        labels.iter().map(|&l| ClassId(l)).collect(),
        (0..d).map(|k| format!("f{k}")).collect(),
        names,
    )
    .unwrap()
}

fn counts_impurity(crit: Criterion, counts: &[f64]) -> f64 {
    let n: f64 = counts.iter().sum();
    if n == 0.0 {
        return 0.0;
    }
    match crit {
        Criterion::Gini => 1.0 - counts.iter().map(|c| (c / n).powi(2)).sum::<f64>(),
        Criterion::Entropy => -counts.iter().filter(|&&c| c > 0.0).map(|c| (c / n) * (c / n).log2()).sum::<f64>(),
    }
}

/// Smallest weighted child impurity over every feature and every cut
/// between consecutive distinct values.
fn brute_force_best(x: &Array2<f64>, y: &[usize], k: usize, crit: Criterion) -> Option<f64> {
    let mut best: Option<f64> = None;
    for f in 0..x.ncols() {
        let mut values: Vec<f64> = x.column(f).to_vec();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let mut left = vec![0.0; k];
            let mut right = vec![0.0; k];
            for (i, &c) in y.iter().enumerate() {
                if x[[i, f]] <= t {
                    left[c] += 1.0;
                } else {
                    right[c] += 1.0;
                }
            }
            let score = left.iter().sum::<f64>() * counts_impurity(crit, &left)
                + right.iter().sum::<f64>() * counts_impurity(crit, &right);
            best = Some(best.map_or(score, |b: f64| b.min(score)));
        }
    }
    best
}

fn children_score(tree_nodes: &[TreeNode], crit: Criterion) -> Option<f64> {
    match &tree_nodes[0] {
        TreeNode::Split { left, right, .. } => {
            let side = |n: usize| {
                let c: Vec<f64> = tree_nodes[n].class_counts().iter().map(|&v| v as f64).collect();
                c.iter().sum::<f64>() * counts_impurity(crit, &c)
            };
            Some(side(*left) + side(*right))
        }
        TreeNode::Leaf { .. } => None,
    }
}

proptest! {
    #[test]
    fn root_split_is_exhaustively_optimal(
        rows in prop::collection::vec((0u8..6, 0u8..6, 0usize..3), 2..=8),
        entropy in any::<bool>(),
        d in 1usize..=2,
    ) {
        let crit = if entropy { Criterion::Entropy } else { Criterion::Gini };
        let x = Array2::from_shape_fn((rows.len(), d), |(i, f)| if f == 0 { rows[i].0 as f64 } else { rows[i].1 as f64 });
        let y: Vec<usize> = rows.iter().map(|r| r.2).collect();
        let params = TreeParams { max_depth: None, max_features: d, criterion: crit, min_samples_leaf: 1 };
        let tree = fit_tree(x.view(), &y, 3, &vec![1; rows.len()], &params, 9);
        let mut parent = vec![0.0; 3];
        y.iter().for_each(|&c| parent[c] += 1.0);
        let parent_score = rows.len() as f64 * counts_impurity(crit, &parent);
        let brute = brute_force_best(&x, &y, 3, crit);
        match (children_score(tree.nodes(), crit), brute) {
            (Some(found), Some(best)) => prop_assert!((found - best).abs() < 1e-9, "tree {found} vs brute {best}"),
            (None, best) => prop_assert!(best.is_none_or(|b| b >= parent_score - 1e-9)),
            (Some(_), None) => prop_assert!(false, "split with no candidate"),
        }
    }

    #[test]
    fn every_query_reaches_one_leaf(seed in 0u64..50, qx in -10.0f64..10.0, qy in -10.0f64..10.0) {
        let x = array![[0.0, 0.0], [1.0, 0.5], [3.0, 3.0], [4.0, 2.0], [0.5, 4.0], [2.0, 1.0]];
        let data = dataset(x, &[1, 1, 2, 2, 3, 1]);
        let forest = fit_forest(&data, &ForestConfig { n_trees: 5, seed, ..ForestConfig::default() }).unwrap();
        let q = array![qx, qy];
        for tree in forest.trees() {
            let leaf = tree.leaf_of(q.view());
            prop_assert!(tree.nodes()[leaf].is_leaf());
        }
        let p = forest.predict_proba(q.view()).unwrap();
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_mass_is_n(seed in 0u64..200, n in 3usize..40) {
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let labels: Vec<u32> = (0..n).map(|i| 1 + (i % 2) as u32).collect();
        let forest = fit_forest(&dataset(x, &labels), &ForestConfig { n_trees: 4, seed, ..ForestConfig::default() }).unwrap();
        for t in 0..4 {
            prop_assert_eq!(forest.bootstrap().tree(t).iter().map(|&c| c as usize).sum::<usize>(), n);
        }
    }
}

#[test]
fn one_dimensional_cut_lands_between_groups() {
    let data = dataset(array![[0.0], [1.0], [10.0], [11.0]], &[1, 1, 2, 2]);
    let params = TreeParams { max_depth: None, max_features: 1, criterion: Criterion::Gini, min_samples_leaf: 1 };
    let tree = fit_tree(data.features(), &[0, 0, 1, 1], 2, &[1, 1, 1, 1], &params, 0);
    let nodes = tree.nodes();
    let TreeNode::Split { threshold, left, right, .. } = &nodes[0] else { panic!("root should split") };
    assert!(*threshold > 1.0 && *threshold < 10.0);
    assert_eq!(nodes[*left].class_counts(), &[2, 0]);
    assert_eq!(nodes[*right].class_counts(), &[0, 2]);
}

fn digits_train() -> Dataset {
    let split = prepare_split(&ExperimentConfig::preset(Experiment::Digits), 0).unwrap();
    standardize(&split.train, None).unwrap().0
}

#[test]
fn every_sample_is_out_of_bag_often() {
    let train = digits_train();
    assert_eq!(train.n_samples(), 720);
    let forest = fit_forest(&train, &ForestConfig { n_trees: 500, seed: 3, ..ForestConfig::default() }).unwrap();
    let min = (0..720).map(|i| forest.bootstrap().oob_trees(i).len()).min().unwrap();
    assert!(min > 100, "smallest out-of-bag count {min}");
}

#[test]
fn oob_accuracy_tracks_cross_validation() {
    let train = digits_train();
    let config = ForestConfig { n_trees: 200, seed: 8, ..ForestConfig::default() };
    let forest = fit_forest(&train, &config).unwrap();
    let oob = forest.oob_predict_filled(&train).unwrap();
    let oob_acc = oob.iter().zip(train.labels()).filter(|(a, b)| a == b).count() as f64 / 720.0;

    let folds = stratified_folds(train.labels(), 5, 8).unwrap();
    let mut correct = 0;
    for f in 0..5 {
        let tr: Vec<usize> = (0..720).filter(|&i| folds[i] != f).collect();
        let va: Vec<usize> = (0..720).filter(|&i| folds[i] == f).collect();
        let model = fit_forest(&train.subset(&tr), &config).unwrap();
        let val = train.subset(&va);
        let pred = model.predict_batch(val.features()).unwrap();
        correct += pred.iter().zip(val.labels()).filter(|(a, b)| a == b).count();
    }
    let cv_acc = correct as f64 / 720.0;
    assert!((oob_acc - cv_acc).abs() < 0.05, "oob {oob_acc} vs cv {cv_acc}");
}

#[test]
fn grid_search_prefers_the_config_that_wins_every_fold() {
    // XOR quadrants: no single axis-aligned cut beats chance, two levels
    // separate the classes exactly.
    let n = 160;
    let x = Array2::from_shape_fn((n, 2), |(i, f)| {
        let sign = if (i >> f) & 1 == 0 { -1.0 } else { 1.0 };
        sign * (1.0 + ((i * (7 + f * 6)) % 11) as f64 * 0.1)
    });
    let labels: Vec<u32> = (0..n).map(|i| 1 + ((i & 1) ^ ((i >> 1) & 1)) as u32).collect();
    let data = dataset(x, &labels);
    let grid = ForestGrid {
        n_trees: vec![50],
        max_depth: vec![Some(1), None],
        max_features: vec![MaxFeatures::Sqrt],
        criterion: vec![Criterion::Gini],
        min_samples_leaf: 1,
        seed: 4,
    };
    let result = grid_search_cv(&data, &grid, 5).unwrap();
    let stump = result.scores.iter().find(|s| s.config.max_depth == Some(1)).unwrap();
    let deep = result.scores.iter().find(|s| s.config.max_depth.is_none()).unwrap();
    assert!(deep.fold_accuracy.iter().zip(&stump.fold_accuracy).all(|(d, s)| d > s));
    assert!(deep.mean_accuracy > 0.95);
    assert_eq!(result.best.max_depth, None);
}
