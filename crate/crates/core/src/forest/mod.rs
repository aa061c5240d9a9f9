//! From-scratch CART random forest with the bootstrap and terminal-node
//! bookkeeping needed for RF-GAP proximities.

mod cv;
mod tree;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use ndarray::{ArrayView1, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassId, Dataset};
use crate::error::{Error, Result};
use crate::seed;

pub use cv::{grid_search_cv, stratified_folds, CvScore, ForestGrid, GridSearchResult};
pub use tree::{entropy, fit_tree, gini, DecisionTree, TreeNode, TreeParams};
pub(crate) use tree::argmax_counts;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    Sqrt,
    Log2,
}

impl MaxFeatures {
    /// Candidate feature count for `d` total features (at least one).
    pub fn resolve(self, d: usize) -> usize {
        let n = match self {
            MaxFeatures::Sqrt => (d as f64).sqrt().floor(),
            MaxFeatures::Log2 => (d as f64).log2().floor(),
        };
        (n as usize).clamp(1, d.max(1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Gini,
    Entropy,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    pub max_features: MaxFeatures,
    pub criterion: Criterion,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 300,
            max_depth: None,
            max_features: MaxFeatures::Sqrt,
            criterion: Criterion::Gini,
            min_samples_leaf: 1,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::config("n_trees must be at least 1"));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::config("min_samples_leaf must be at least 1"));
        }
        if self.max_depth == Some(0) {
            return Err(Error::config("max_depth must be positive"));
        }
        Ok(())
    }

    fn tree_params(&self, d: usize) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            max_features: self.max_features.resolve(d),
            criterion: self.criterion,
            min_samples_leaf: self.min_samples_leaf,
        }
    }
}

/// Per-tree bootstrap multiplicities `c_j(t)` over the training samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRecord {
    multiplicities: Vec<Vec<u32>>,
}

impl BootstrapRecord {
    pub fn new(multiplicities: Vec<Vec<u32>>) -> Result<Self> {
        let n = multiplicities.first().map_or(0, Vec::len);
        if multiplicities.iter().any(|m| m.len() != n) {
            return Err(Error::data("bootstrap vectors differ in length"));
        }
        Ok(BootstrapRecord { multiplicities })
    }

    pub fn n_trees(&self) -> usize {
        self.multiplicities.len()
    }

    pub fn n_samples(&self) -> usize {
        self.multiplicities.first().map_or(0, Vec::len)
    }

    pub fn tree(&self, t: usize) -> &[u32] {
        &self.multiplicities[t]
    }

    pub fn multiplicity(&self, t: usize, j: usize) -> u32 {
        self.multiplicities[t][j]
    }

    pub fn is_oob(&self, t: usize, j: usize) -> bool {
        self.multiplicities[t][j] == 0
    }

    /// Trees in which sample `i` is out of bag (the set `S_i`).
    pub fn oob_trees(&self, i: usize) -> Vec<usize> {
        (0..self.n_trees()).filter(|&t| self.is_oob(t, i)).collect()
    }
}

/// Draws a size-`n` bootstrap with replacement.
fn bootstrap(n: usize, seed: u64) -> Vec<u32> {
    let mut rng = seed::rng(seed);
    let mut m = vec![0u32; n];
    for _ in 0..n {
        m[rng.random_range(0..n)] += 1;
    }
    m
}

const BOOTSTRAP_TAG: u64 = 0xB007;

/// Trained ensemble. Class indices inside trees refer to positions in
/// [`Forest::classes`], which is sorted ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    config: ForestConfig,
    classes: Vec<ClassId>,
    n_features: usize,
    trees: Vec<DecisionTree>,
    bootstrap: BootstrapRecord,
}

pub const FOREST_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ForestFile {
    schema_version: u32,
    forest: Forest,
}

impl Forest {
    pub fn from_parts(
        config: ForestConfig,
        classes: Vec<ClassId>,
        n_features: usize,
        trees: Vec<DecisionTree>,
        bootstrap: BootstrapRecord,
    ) -> Result<Self> {
        if trees.len() != bootstrap.n_trees() {
            return Err(Error::DimensionMismatch { expected: trees.len(), got: bootstrap.n_trees() });
        }
        Ok(Forest { config, classes, n_features, trees, bootstrap })
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn bootstrap(&self) -> &BootstrapRecord {
        &self.bootstrap
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.n_features {
            return Err(Error::DimensionMismatch { expected: self.n_features, got: d });
        }
        Ok(())
    }

    /// Leaf id of `x` in tree `t`.
    pub fn terminal_of(&self, t: usize, x: ArrayView1<'_, f64>) -> usize {
        self.trees[t].leaf_of(x)
    }

    /// Leaf ids of every row, per tree: `result[t][i]`.
    pub fn leaf_assignments(&self, features: ArrayView2<'_, f64>) -> Result<Vec<Vec<usize>>> {
        self.check_dim(features.ncols())?;
        Ok(self
            .trees
            .par_iter()
            .map(|tree| features.rows().into_iter().map(|x| tree.leaf_of(x)).collect())
            .collect())
    }

    /// Trees voting for each class.
    pub fn votes(&self, x: ArrayView1<'_, f64>) -> Result<Vec<usize>> {
        self.check_dim(x.len())?;
        let mut votes = vec![0usize; self.n_classes()];
        for tree in &self.trees {
            votes[tree.predict_index(x)] += 1;
        }
        Ok(votes)
    }

    pub fn predict_proba(&self, x: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
        let votes = self.votes(x)?;
        let n = self.trees.len() as f64;
        Ok(votes.into_iter().map(|v| v as f64 / n).collect())
    }

    /// Majority vote; ties go to the lowest class id.
    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<ClassId> {
        let votes = self.votes(x)?;
        Ok(self.classes[argmax_counts(&votes)])
    }

    pub fn predict_batch(&self, features: ArrayView2<'_, f64>) -> Result<Vec<ClassId>> {
        self.check_dim(features.ncols())?;
        features.rows().into_iter().map(|x| self.predict(x)).collect()
    }

    /// Majority vote over the trees where each training sample is out of
    /// bag; `None` when the sample is in-bag everywhere.
    pub fn oob_predict(&self, train: &Dataset) -> Result<Vec<Option<ClassId>>> {
        let n = train.n_samples();
        if n != self.bootstrap.n_samples() {
            return Err(Error::DimensionMismatch { expected: self.bootstrap.n_samples(), got: n });
        }
        self.check_dim(train.n_features())?;
        let features = train.features();
        Ok((0..n)
            .into_par_iter()
            .map(|i| {
                let mut votes = vec![0usize; self.n_classes()];
                let mut any = false;
                for (t, tree) in self.trees.iter().enumerate() {
                    if self.bootstrap.is_oob(t, i) {
                        votes[tree.predict_index(features.row(i))] += 1;
                        any = true;
                    }
                }
                any.then(|| self.classes[argmax_counts(&votes)])
            })
            .collect())
    }

    /// OOB predictions with abstentions replaced by the training majority class.
    pub fn oob_predict_filled(&self, train: &Dataset) -> Result<Vec<ClassId>> {
        let counts = train.class_counts();
        let fallback = self
            .classes
            .iter()
            .copied()
            .max_by(|a, b| counts.get(a).cmp(&counts.get(b)).then(b.cmp(a)))
            .expect("forest has classes");
        Ok(self.oob_predict(train)?.into_iter().map(|p| p.unwrap_or(fallback)).collect())
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        let file = ForestFile { schema_version: FOREST_SCHEMA_VERSION, forest: self.clone() };
        serde_json::to_writer(writer, &file)?;
        Ok(())
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Forest> {
        let file: ForestFile = serde_json::from_reader(reader)?;
        if file.schema_version != FOREST_SCHEMA_VERSION {
            return Err(Error::data(format!("unsupported forest schema version {}", file.schema_version)));
        }
        Ok(file.forest)
    }
}

/// Fits `config.n_trees` independent (bootstrap, tree) pairs. Tree `t`
/// draws everything from a stream seeded by `(config.seed, t)` only.
pub fn fit_forest(train: &Dataset, config: &ForestConfig) -> Result<Forest> {
    config.validate()?;
    let classes = train.classes();
    if classes.len() < 2 {
        return Err(Error::data("forest training data must contain at least two classes"));
    }
    let index: BTreeMap<ClassId, usize> = classes.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let y: Vec<usize> = train.labels().iter().map(|l| index[l]).collect();
    let n = train.n_samples();
    let params = config.tree_params(train.n_features());
    let features = train.features();

    let fitted: Vec<(Vec<u32>, DecisionTree)> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let tree_seed = seed::derive(config.seed, t as u64);
            let m = bootstrap(n, seed::derive(tree_seed, BOOTSTRAP_TAG));
            let tree = fit_tree(features, &y, classes.len(), &m, &params, tree_seed);
            (m, tree)
        })
        .collect();
    let (mult, trees): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();
    Ok(Forest {
        config: config.clone(),
        classes,
        n_features: train.n_features(),
        trees,
        bootstrap: BootstrapRecord::new(mult)?,
    })
}
