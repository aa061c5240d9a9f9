use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::ClassId;
use crate::error::{Error, Result};

/// Exact Euclidean nearest-neighbor search over a small dense point set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborIndex {
    points: Array2<f64>,
    labels: Vec<ClassId>,
}

/// Quantities entering the distance ratio of one query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioDetail {
    /// Majority label of the K nearest neighbors.
    pub label: ClassId,
    pub mean_distance: f64,
    pub counter_distance: f64,
    /// `mean_distance / counter_distance`, `+inf` when the latter is zero.
    pub ratio: f64,
}

impl NeighborIndex {
    pub fn new(points: Array2<f64>, labels: Vec<ClassId>) -> Result<Self> {
        if points.nrows() != labels.len() {
            return Err(Error::DimensionMismatch { expected: points.nrows(), got: labels.len() });
        }
        if points.nrows() == 0 {
            return Err(Error::data("neighbor index is empty"));
        }
        Ok(NeighborIndex { points, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn class_counts(&self) -> BTreeMap<ClassId, usize> {
        let mut counts = BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Result<NeighborIndex> {
        NeighborIndex::new(
            self.points.select(Axis(0), indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Every indexed point as `(distance, index)`, ascending, ties by index.
    /// `exclude` drops one index (leave-one-out).
    pub fn sorted_neighbors(&self, x: ArrayView1<'_, f64>, exclude: Option<usize>) -> Result<Vec<(f64, usize)>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let mut out: Vec<(f64, usize)> = self
            .points
            .rows()
            .into_iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(i, p)| {
                let d2: f64 = p.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2.sqrt(), i)
            })
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(out)
    }

    /// The `k` nearest points as `(distance, index)`.
    pub fn k_nearest(&self, x: ArrayView1<'_, f64>, k: usize) -> Result<Vec<(f64, usize)>> {
        let mut all = self.sorted_neighbors(x, None)?;
        all.truncate(k);
        Ok(all)
    }
}

/// Majority label among the leading `k` entries, ties to the lowest id.
fn majority(sorted: &[(f64, usize)], labels: &[ClassId], k: usize) -> ClassId {
    let mut counts: BTreeMap<ClassId, usize> = BTreeMap::new();
    for &(_, i) in &sorted[..k] {
        *counts.entry(labels[i]).or_insert(0) += 1;
    }
    let mut best = (ClassId::UNKNOWN, 0);
    for (c, n) in counts {
        if n > best.1 {
            best = (c, n);
        }
    }
    best.0
}

fn mean_counter(sorted: &[(f64, usize)], labels: &[ClassId], label: ClassId, k: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut found = 0;
    for &(d, i) in sorted {
        if labels[i] != label {
            sum += d;
            found += 1;
            if found == k {
                return Ok(sum / k as f64);
            }
        }
    }
    Err(Error::data(format!("fewer than {k} points with a label other than {label}")))
}

fn ratio(mean: f64, counter: f64) -> f64 {
    if counter == 0.0 {
        f64::INFINITY
    } else {
        mean / counter
    }
}

/// Ratio details for every `K` in `1..=k_max` from one sorted neighbor list.
pub(crate) fn ratio_profile(sorted: &[(f64, usize)], labels: &[ClassId], k_max: usize) -> Result<Vec<RatioDetail>> {
    if sorted.len() < k_max {
        return Err(Error::data(format!("need at least {k_max} neighbors, index has {}", sorted.len())));
    }
    let mut out = Vec::with_capacity(k_max);
    let mut sum = 0.0;
    for k in 1..=k_max {
        sum += sorted[k - 1].0;
        let label = majority(sorted, labels, k);
        let mean_distance = sum / k as f64;
        let counter_distance = mean_counter(sorted, labels, label, k)?;
        out.push(RatioDetail { label, mean_distance, counter_distance, ratio: ratio(mean_distance, counter_distance) });
    }
    Ok(out)
}

fn check_k(index: &NeighborIndex, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::config("K must be at least 1"));
    }
    if index.is_empty() {
        return Err(Error::data("neighbor index is empty"));
    }
    Ok(())
}

/// Majority label of the `k` nearest neighbors and their mean distance.
pub fn knn_label_and_distance(index: &NeighborIndex, x: ArrayView1<'_, f64>, k: usize) -> Result<(ClassId, f64)> {
    check_k(index, k)?;
    let sorted = index.k_nearest(x, k)?;
    if sorted.len() < k {
        return Err(Error::data(format!("index has {} points, fewer than K = {k}", sorted.len())));
    }
    let mean = sorted.iter().map(|s| s.0).sum::<f64>() / k as f64;
    Ok((majority(&sorted, index.labels(), k), mean))
}

/// Mean distance to the `k` nearest points labelled differently from `label`.
pub fn counter_distance(index: &NeighborIndex, x: ArrayView1<'_, f64>, label: ClassId, k: usize) -> Result<f64> {
    check_k(index, k)?;
    let sorted = index.sorted_neighbors(x, None)?;
    mean_counter(&sorted, index.labels(), label, k)
}

pub fn distance_ratio(index: &NeighborIndex, x: ArrayView1<'_, f64>, k: usize) -> Result<RatioDetail> {
    check_k(index, k)?;
    let sorted = index.sorted_neighbors(x, None)?;
    Ok(ratio_profile(&sorted, index.labels(), k)?[k - 1])
}

/// Leave-one-out ratio of every indexed point.
pub fn training_ratios(index: &NeighborIndex, k: usize) -> Result<Vec<f64>> {
    Ok(training_ratio_profiles(index, k)?.into_iter().map(|p| p[k - 1].ratio).collect())
}

/// Leave-one-out ratio details of every indexed point for `K = 1..=k_max`.
pub(crate) fn training_ratio_profiles(index: &NeighborIndex, k_max: usize) -> Result<Vec<Vec<RatioDetail>>> {
    use rayon::prelude::*;
    check_k(index, k_max)?;
    if let Some((c, n)) = index.class_counts().into_iter().find(|(_, n)| *n <= k_max) {
        return Err(Error::data(format!("class {c} has {n} members; need more than K = {k_max}")));
    }
    (0..index.len())
        .into_par_iter()
        .map(|i| {
            let sorted = index.sorted_neighbors(index.point(i), Some(i))?;
            ratio_profile(&sorted, index.labels(), k_max)
        })
        .collect()
}
