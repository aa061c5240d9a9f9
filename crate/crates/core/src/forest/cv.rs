use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{argmax_counts, fit_forest, Criterion, ForestConfig, MaxFeatures};
use crate::dataset::{ClassId, Dataset};
use crate::error::{Error, Result};
use crate::seed;

/// Cartesian grid of forest hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestGrid {
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<Option<usize>>,
    pub max_features: Vec<MaxFeatures>,
    pub criterion: Vec<Criterion>,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl ForestGrid {
    /// Trees 100..=500 step 50, depth 5..=50 step 5 plus unlimited, both
    /// feature rules and both criteria: 396 configurations.
    pub fn full(seed: u64) -> Self {
        let mut max_depth: Vec<Option<usize>> = (1..=10).map(|k| Some(5 * k)).collect();
        max_depth.push(None);
        ForestGrid {
            n_trees: (100..=500).step_by(50).collect(),
            max_depth,
            max_features: vec![MaxFeatures::Sqrt, MaxFeatures::Log2],
            criterion: vec![Criterion::Gini, Criterion::Entropy],
            min_samples_leaf: 1,
            seed,
        }
    }

    /// Reduced grid: trees {100, 300, 500}, depth {10, 30, unlimited}.
    pub fn fast(seed: u64) -> Self {
        ForestGrid {
            n_trees: vec![100, 300, 500],
            max_depth: vec![Some(10), Some(30), None],
            ..ForestGrid::full(seed)
        }
    }

    pub fn single(config: &ForestConfig) -> Self {
        ForestGrid {
            n_trees: vec![config.n_trees],
            max_depth: vec![config.max_depth],
            max_features: vec![config.max_features],
            criterion: vec![config.criterion],
            min_samples_leaf: config.min_samples_leaf,
            seed: config.seed,
        }
    }

    pub fn len(&self) -> usize {
        self.n_trees.len() * self.max_depth.len() * self.max_features.len() * self.criterion.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every configuration in grid order.
    pub fn configs(&self) -> Vec<ForestConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &max_features in &self.max_features {
            for &criterion in &self.criterion {
                for &max_depth in &self.max_depth {
                    for &n_trees in &self.n_trees {
                        out.push(ForestConfig {
                            n_trees,
                            max_depth,
                            max_features,
                            criterion,
                            min_samples_leaf: self.min_samples_leaf,
                            seed: self.seed,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub config: ForestConfig,
    pub fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: ForestConfig,
    /// Empty when the grid has a single configuration.
    pub scores: Vec<CvScore>,
}

/// Fold index for every sample: each class is shuffled and dealt round-robin,
/// continuing the rotation across classes so fold sizes stay balanced.
pub fn stratified_folds(labels: &[ClassId], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::config(format!("need at least 2 folds, got {folds}")));
    }
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut assignment = vec![0; labels.len()];
    let mut offset = 0;
    for (c, mut members) in by_class {
        if members.len() < folds {
            return Err(Error::data(format!(
                "class {c} has {} samples, fewer than {folds} folds",
                members.len()
            )));
        }
        members.shuffle(&mut seed::rng(seed::derive(seed, c.0 as u64)));
        for (k, i) in members.into_iter().enumerate() {
            assignment[i] = (offset + k) % folds;
        }
        offset += 1;
    }
    Ok(assignment)
}

fn depth_key(d: Option<usize>) -> usize {
    d.unwrap_or(usize::MAX)
}

/// Stratified k-fold grid search; returns the configuration with the best
/// mean validation accuracy, ties going to fewer trees and then shallower
/// depth.
///
/// Per fold, one forest with the largest tree count and unlimited depth is
/// grown per (feature rule, criterion). Smaller tree counts are its prefixes
/// and shallower depths its truncations, which coincide exactly with forests
/// fitted directly at those settings because every tree and every node draws
/// from its own seeded stream.
pub fn grid_search_cv(train: &Dataset, grid: &ForestGrid, folds: usize) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(Error::config("forest grid is empty"));
    }
    let configs = grid.configs();
    if configs.len() == 1 {
        return Ok(GridSearchResult { best: configs[0].clone(), scores: Vec::new() });
    }
    let assignment = stratified_folds(train.labels(), folds, seed::derive(grid.seed, 0xF01D))?;
    let max_trees = *grid.n_trees.iter().max().unwrap();
    let deepest = if grid.max_depth.contains(&None) { None } else { grid.max_depth.iter().flatten().max().copied() };

    let mut fold_acc: HashMap<(MaxFeatures, Criterion, Option<usize>, usize), Vec<f64>> = HashMap::new();
    for fold in 0..folds {
        let tr: Vec<usize> = (0..train.n_samples()).filter(|&i| assignment[i] != fold).collect();
        let va: Vec<usize> = (0..train.n_samples()).filter(|&i| assignment[i] == fold).collect();
        let fold_train = train.subset(&tr);
        let fold_val = train.subset(&va);
        for &mf in &grid.max_features {
            for &crit in &grid.criterion {
                let config = ForestConfig {
                    n_trees: max_trees,
                    max_depth: deepest,
                    max_features: mf,
                    criterion: crit,
                    min_samples_leaf: grid.min_samples_leaf,
                    seed: grid.seed,
                };
                let forest = fit_forest(&fold_train, &config)?;
                let classes = forest.classes().to_vec();
                for &depth in &grid.max_depth {
                    let mut votes = vec![vec![0usize; classes.len()]; va.len()];
                    let mut checkpoints: Vec<usize> = grid.n_trees.clone();
                    checkpoints.sort_unstable();
                    let mut next = 0;
                    for (t, tree) in forest.trees().iter().enumerate() {
                        for (v, row) in fold_val.features().rows().into_iter().enumerate() {
                            votes[v][tree.predict_index_at_depth(row, depth)] += 1;
                        }
                        while next < checkpoints.len() && checkpoints[next] == t + 1 {
                            let correct = votes
                                .iter()
                                .zip(fold_val.labels())
                                .filter(|(vt, y)| classes.get(argmax_counts(vt)) == Some(y))
                                .count();
                            fold_acc
                                .entry((mf, crit, depth, t + 1))
                                .or_default()
                                .push(correct as f64 / va.len() as f64);
                            next += 1;
                        }
                    }
                }
            }
        }
    }

    let mut scores = Vec::with_capacity(configs.len());
    for config in configs {
        let acc = fold_acc[&(config.max_features, config.criterion, config.max_depth, config.n_trees)].clone();
        let mean = acc.iter().sum::<f64>() / acc.len() as f64;
        scores.push(CvScore { config, fold_accuracy: acc, mean_accuracy: mean });
    }
    let best = scores
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            b.mean_accuracy
                .total_cmp(&a.mean_accuracy)
                .then(a.config.n_trees.cmp(&b.config.n_trees))
                .then(depth_key(a.config.max_depth).cmp(&depth_key(b.config.max_depth)))
                .then(ia.cmp(ib))
        })
        .map(|(_, s)| s.config.clone())
        .unwrap();
    Ok(GridSearchResult { best, scores })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_grid_has_396_configs() {
        let g = ForestGrid::full(0);
        assert_eq!(g.len(), 9 * 11 * 2 * 2);
        assert_eq!(g.configs().len(), 396);
        assert_eq!(ForestGrid::fast(0).len(), 36);
    }

    #[test]
    fn folds_are_stratified() {
        let labels: Vec<ClassId> = (0..53).map(|i| ClassId(1 + (i % 3) as u32)).collect();
        let a = stratified_folds(&labels, 5, 1).unwrap();
        for c in 1..=3 {
            let mut per_fold = [0usize; 5];
            for (i, l) in labels.iter().enumerate() {
                if l.0 == c {
                    per_fold[a[i]] += 1;
                }
            }
            let (lo, hi) = (per_fold.iter().min().unwrap(), per_fold.iter().max().unwrap());
            assert!(hi - lo <= 1);
        }
    }

    #[test]
    fn small_class_cannot_stratify() {
        let labels = vec![ClassId(1), ClassId(1), ClassId(2)];
        assert!(stratified_folds(&labels, 2, 0).is_err());
    }
}
