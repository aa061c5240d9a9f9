use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use super::gpd::TailModel;
use super::knn::{distance_ratio, ratio_profile, training_ratio_profiles, NeighborIndex, RatioDetail};
use super::{rotation_folds, unknown_geo_mean, OpenSetPredict};
use crate::dataset::{ClassId, Dataset};
use crate::error::{Error, Result};
use crate::forest::{stratified_folds, Forest};
use crate::metric::MetricModel;

/// Forest plus KNN distance-ratio test in the metric's transformed space.
///
/// A query is accepted with the forest's label when the calibrated
/// probability of a known-class ratio at least as large as its own is at
/// least `alpha`, and is labelled unknown otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenSetClassifier {
    forest: Forest,
    metric: MetricModel,
    index: NeighborIndex,
    tail: TailModel,
    k: usize,
    alpha: f64,
}

/// Per-query audit record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub knn_label: ClassId,
    pub mean_distance: f64,
    pub counter_distance: f64,
    pub ratio: f64,
    pub exceedance: f64,
    pub forest_label: ClassId,
    pub decision: ClassId,
}

impl OpenSetClassifier {
    /// Indexes the transformed training points and fits the tail to their
    /// leave-one-out ratios.
    pub fn build(
        forest: Forest,
        metric: MetricModel,
        train: &Dataset,
        k: usize,
        quantile: f64,
        alpha: f64,
    ) -> Result<Self> {
        if k == 0 || k >= train.n_samples() {
            return Err(Error::config(format!("K must be in 1..{}, got {k}", train.n_samples())));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::config(format!("alpha must be in [0,1], got {alpha}")));
        }
        if forest.bootstrap().n_samples() != train.n_samples() {
            return Err(Error::data("forest was not trained on this training set"));
        }
        let points = metric.transform_matrix(train.features())?;
        let index = NeighborIndex::new(points, train.labels().to_vec())?;
        let profiles = training_ratio_profiles(&index, k)?;
        let ratios: Vec<f64> = profiles.iter().map(|p| p[k - 1].ratio).collect();
        let tail = TailModel::fit(&ratios, quantile)?;
        Ok(OpenSetClassifier { forest, metric, index, tail, k, alpha })
    }

    pub fn forest(&self) -> &Forest {
        &self.forest
    }

    pub fn metric(&self) -> &MetricModel {
        &self.metric
    }

    pub fn index(&self) -> &NeighborIndex {
        &self.index
    }

    pub fn tail(&self) -> &TailModel {
        &self.tail
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::config(format!("alpha must be in [0,1], got {alpha}")));
        }
        Ok(OpenSetClassifier { alpha, ..self.clone() })
    }

    pub fn diagnose(&self, x: ArrayView1<'_, f64>) -> Result<Diagnostics> {
        let xt = ndarray::Array1::from(self.metric.transform(x)?);
        let RatioDetail { label, mean_distance, counter_distance, ratio } =
            distance_ratio(&self.index, xt.view(), self.k)?;
        let exceedance = self.tail.exceedance_prob(ratio);
        let forest_label = self.forest.predict(x)?;
        let decision = if exceedance >= self.alpha { forest_label } else { ClassId::UNKNOWN };
        Ok(Diagnostics { knn_label: label, mean_distance, counter_distance, ratio, exceedance, forest_label, decision })
    }

    pub fn classify(&self, x: ArrayView1<'_, f64>) -> Result<ClassId> {
        Ok(self.diagnose(x)?.decision)
    }
}

impl OpenSetPredict for OpenSetClassifier {
    fn input_dim(&self) -> usize {
        self.forest.n_features()
    }

    fn predict_one(&self, x: ArrayView1<'_, f64>) -> Result<ClassId> {
        self.classify(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KosnnGrid {
    pub k: Vec<usize>,
    pub quantile: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl Default for KosnnGrid {
    fn default() -> Self {
        KosnnGrid {
            k: (1..=10).collect(),
            quantile: vec![0.70, 0.80, 0.90],
            alpha: vec![0.01, 0.02, 0.05, 0.10],
        }
    }
}

impl KosnnGrid {
    pub fn validate(&self) -> Result<()> {
        if self.k.is_empty() || self.quantile.is_empty() || self.alpha.is_empty() {
            return Err(Error::config("KOSNN grid has an empty axis"));
        }
        if self.k.contains(&0) {
            return Err(Error::config("K grid contains 0"));
        }
        if self.quantile.iter().any(|q| !(0.0..1.0).contains(q)) {
            return Err(Error::config("quantile grid values must be in [0,1)"));
        }
        if self.alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::config("alpha grid values must be in [0,1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchCriterion {
    /// Pseudo-open-set geometric mean of unknown precision and recall.
    GeoMeanPr,
    /// Closed-set KNN accuracy (two known classes).
    KnnAccuracy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KosnnScore {
    pub k: usize,
    pub quantile: f64,
    pub alpha: f64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KosnnSearch {
    pub k: usize,
    pub quantile: f64,
    pub alpha: f64,
    pub criterion: SearchCriterion,
    pub scores: Vec<KosnnScore>,
}

/// Largest K every neighborhood in the search can support.
fn k_limit(labels: &[ClassId], subsets: &[&[usize]]) -> usize {
    let mut limit = usize::MAX;
    let mut update = |idx: &mut dyn Iterator<Item = ClassId>| {
        let mut counts = std::collections::BTreeMap::new();
        for l in idx {
            *counts.entry(l).or_insert(0usize) += 1;
        }
        if let Some(min) = counts.values().min() {
            limit = limit.min(min.saturating_sub(1));
        }
    };
    update(&mut labels.iter().copied());
    for s in subsets {
        update(&mut s.iter().map(|&i| labels[i]));
    }
    limit
}

fn feasible_k(grid: &KosnnGrid, limit: usize) -> Result<Vec<usize>> {
    let ks: Vec<usize> = grid.k.iter().copied().filter(|&k| k <= limit).collect();
    if ks.is_empty() {
        return Err(Error::data(format!("classes are too small for any K in the grid (largest usable K is {limit})")));
    }
    if ks.len() < grid.k.len() {
        log::warn!("dropping K values above {limit}: classes are too small");
    }
    Ok(ks)
}

/// Chooses `(K, quantile, alpha)` by cross-validation and builds the final
/// classifier on the full training set.
///
/// With three or more known classes each fold holds one class out as a
/// pseudo-unknown and the unknown-decision geometric mean is maximized.
/// With two classes alpha and the quantile are fixed to their grid midpoints
/// and K maximizes closed-set KNN accuracy.
pub fn fit_kosnn(
    forest: Forest,
    metric: MetricModel,
    train: &Dataset,
    folds: usize,
    grid: &KosnnGrid,
    seed: u64,
) -> Result<(OpenSetClassifier, KosnnSearch)> {
    grid.validate()?;
    let classes = train.classes();
    if classes.len() < 2 {
        return Err(Error::data("open-set classifier needs at least two known classes"));
    }
    let points = metric.transform_matrix(train.features())?;
    let full = NeighborIndex::new(points, train.labels().to_vec())?;
    let labels = train.labels();

    let search = if classes.len() >= 3 {
        let rot = rotation_folds(labels, folds, seed)?;
        let train_sets: Vec<&[usize]> = rot.iter().map(|f| f.train.as_slice()).collect();
        let ks = feasible_k(grid, k_limit(labels, &train_sets))?;
        let k_max = *ks.iter().max().unwrap();
        let mut sums = vec![0.0; ks.len() * grid.quantile.len() * grid.alpha.len()];
        for fold in &rot {
            let sub = full.subset(&fold.train)?;
            let train_profiles = training_ratio_profiles(&sub, k_max)?;
            let val_profiles: Vec<Vec<RatioDetail>> = fold
                .validation
                .iter()
                .map(|&i| ratio_profile(&sub.sorted_neighbors(full.point(i), None)?, sub.labels(), k_max))
                .collect::<Result<_>>()?;
            let mut slot = 0;
            for &k in &ks {
                let ratios: Vec<f64> = train_profiles.iter().map(|p| p[k - 1].ratio).collect();
                for &q in &grid.quantile {
                    let tail = TailModel::fit(&ratios, q)?;
                    let probs: Vec<f64> = val_profiles.iter().map(|p| tail.exceedance_prob(p[k - 1].ratio)).collect();
                    for &a in &grid.alpha {
                        sums[slot] += unknown_geo_mean(&fold.is_unknown, probs.iter().map(|&p| p < a));
                        slot += 1;
                    }
                }
            }
        }
        let mut scores = Vec::with_capacity(sums.len());
        let mut slot = 0;
        for &k in &ks {
            for &quantile in &grid.quantile {
                for &alpha in &grid.alpha {
                    scores.push(KosnnScore { k, quantile, alpha, score: sums[slot] / rot.len() as f64 });
                    slot += 1;
                }
            }
        }
        let best = first_max(&scores);
        KosnnSearch {
            k: best.k,
            quantile: best.quantile,
            alpha: best.alpha,
            criterion: SearchCriterion::GeoMeanPr,
            scores,
        }
    } else {
        let assignment = stratified_folds(labels, folds, seed)?;
        let fold_train: Vec<Vec<usize>> =
            (0..folds).map(|f| (0..labels.len()).filter(|&i| assignment[i] != f).collect()).collect();
        let train_sets: Vec<&[usize]> = fold_train.iter().map(Vec::as_slice).collect();
        let ks = feasible_k(grid, k_limit(labels, &train_sets))?;
        let k_max = *ks.iter().max().unwrap();
        let quantile = grid.quantile[grid.quantile.len() / 2];
        let alpha = grid.alpha[grid.alpha.len() / 2];
        let mut correct = vec![0usize; ks.len()];
        for (f, tr) in fold_train.iter().enumerate() {
            let sub = full.subset(tr)?;
            for i in (0..labels.len()).filter(|&i| assignment[i] == f) {
                let profile = ratio_profile(&sub.sorted_neighbors(full.point(i), None)?, sub.labels(), k_max)?;
                for (slot, &k) in ks.iter().enumerate() {
                    correct[slot] += (profile[k - 1].label == labels[i]) as usize;
                }
            }
        }
        let scores: Vec<KosnnScore> = ks
            .iter()
            .zip(&correct)
            .map(|(&k, &c)| KosnnScore { k, quantile, alpha, score: c as f64 / labels.len() as f64 })
            .collect();
        let best = first_max(&scores);
        KosnnSearch { k: best.k, quantile, alpha, criterion: SearchCriterion::KnnAccuracy, scores }
    };
    let clf = OpenSetClassifier::build(forest, metric, train, search.k, search.quantile, search.alpha)?;
    Ok((clf, search))
}

fn first_max(scores: &[KosnnScore]) -> &KosnnScore {
    let mut best = &scores[0];
    for s in &scores[1..] {
        if s.score > best.score {
            best = s;
        }
    }
    best
}
