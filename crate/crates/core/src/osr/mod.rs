//! Distance-ratio open-set classification: KOSNN with a generalized-Pareto
//! tail and the OSNN baseline.

mod gpd;
mod knn;
mod kosnn;
mod osnn;

use ndarray::{ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::dataset::ClassId;
use crate::error::{Error, Result};
use crate::forest::stratified_folds;

pub use gpd::{fit_gpd, gpd_loglik, gpd_quantile, gpd_survival, GpdFit, TailFit, TailModel, MIN_EXCESSES};
pub use knn::{
    counter_distance, distance_ratio, knn_label_and_distance, training_ratios, NeighborIndex, RatioDetail,
};
pub use kosnn::{fit_kosnn, Diagnostics, KosnnGrid, KosnnScore, KosnnSearch, OpenSetClassifier, SearchCriterion};
pub use osnn::{fit_osnn, osnn_classify, osnn_ratio, OsnnBaseline, OsnnSearch};

/// Anything that maps a feature vector to a known class or
/// [`ClassId::UNKNOWN`].
pub trait OpenSetPredict: Sync {
    fn input_dim(&self) -> usize;

    fn predict_one(&self, x: ArrayView1<'_, f64>) -> Result<ClassId>;

    fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Vec<ClassId>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.ncols() });
        }
        (0..x.nrows()).into_par_iter().map(|i| self.predict_one(x.row(i))).collect()
    }
}

/// One cross-validation round with a held-out known class.
pub(crate) struct RotationFold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    /// Per validation sample: whether it belongs to the held-out class.
    pub is_unknown: Vec<bool>,
}

/// Stratified folds where fold `f` additionally holds out class
/// `classes[f % C]` entirely: it is removed from training and all of its
/// samples join the validation set as pseudo-unknowns.
pub(crate) fn rotation_folds(labels: &[ClassId], folds: usize, seed: u64) -> Result<Vec<RotationFold>> {
    let assignment = stratified_folds(labels, folds, seed)?;
    let mut classes: Vec<ClassId> = labels.to_vec();
    classes.sort();
    classes.dedup();
    Ok((0..folds)
        .map(|f| {
            let held = classes[f % classes.len()];
            let mut train = Vec::new();
            let mut validation = Vec::new();
            let mut is_unknown = Vec::new();
            for (i, &l) in labels.iter().enumerate() {
                if l == held {
                    validation.push(i);
                    is_unknown.push(true);
                } else if assignment[i] == f {
                    validation.push(i);
                    is_unknown.push(false);
                } else {
                    train.push(i);
                }
            }
            RotationFold { train, validation, is_unknown }
        })
        .collect())
}

/// Geometric mean of precision and recall of the unknown decision.
pub(crate) fn unknown_geo_mean(is_unknown: &[bool], rejected: impl Iterator<Item = bool>) -> f64 {
    let (mut tp, mut predicted, mut actual) = (0usize, 0usize, 0usize);
    for (&u, r) in is_unknown.iter().zip(rejected) {
        tp += (u && r) as usize;
        predicted += r as usize;
        actual += u as usize;
    }
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / predicted as f64;
    let r = tp as f64 / actual as f64;
    (p * r).sqrt()
}
