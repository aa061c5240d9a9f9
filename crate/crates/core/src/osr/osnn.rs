use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use super::knn::NeighborIndex;
use super::{rotation_folds, unknown_geo_mean, OpenSetPredict};
use crate::dataset::ClassId;
use crate::error::{Error, Result};

/// Nearest-neighbor distance-ratio baseline: the ratio of the distance to
/// the nearest point and to the nearest point of a different class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OsnnBaseline {
    index: NeighborIndex,
    threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OsnnSearch {
    pub threshold: f64,
    /// `(threshold, mean score)`; empty when the threshold was fixed.
    pub scores: Vec<(f64, f64)>,
}

impl OsnnBaseline {
    pub fn new(index: NeighborIndex, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::config(format!("OSNN threshold must be in (0,1], got {threshold}")));
        }
        if index.class_counts().len() < 2 {
            return Err(Error::data("OSNN needs at least two classes"));
        }
        Ok(OsnnBaseline { index, threshold })
    }

    /// 0.50, 0.55, ..., 1.00.
    pub fn default_thresholds() -> Vec<f64> {
        (0..=10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
    }

    pub fn index(&self) -> &NeighborIndex {
        &self.index
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

/// Nearest label and the ratio `d(x, t) / d(x, u)`, where `t` is the nearest
/// point and `u` the nearest point labelled differently from `t`. The ratio
/// is 0 when `x` coincides with `t`.
pub fn osnn_ratio(index: &NeighborIndex, x: ArrayView1<'_, f64>) -> Result<(ClassId, f64)> {
    let sorted = index.sorted_neighbors(x, None)?;
    let (dt, t) = sorted[0];
    let label = index.labels()[t];
    let du = sorted
        .iter()
        .find(|(_, i)| index.labels()[*i] != label)
        .map(|(d, _)| *d)
        .ok_or_else(|| Error::data("OSNN needs at least two classes"))?;
    let rho = if dt == 0.0 { 0.0 } else { dt / du };
    Ok((label, rho))
}

pub fn osnn_classify(baseline: &OsnnBaseline, x: ArrayView1<'_, f64>) -> Result<ClassId> {
    let (label, rho) = osnn_ratio(&baseline.index, x)?;
    Ok(if rho <= baseline.threshold { label } else { ClassId::UNKNOWN })
}

impl OpenSetPredict for OsnnBaseline {
    fn input_dim(&self) -> usize {
        self.index.dim()
    }

    fn predict_one(&self, x: ArrayView1<'_, f64>) -> Result<ClassId> {
        osnn_classify(self, x)
    }
}

/// Picks the threshold maximizing the pseudo-open-set unknown geometric mean
/// under class rotation. With two classes no class can be held out, so the
/// middle of the grid is used.
pub fn fit_osnn(index: NeighborIndex, folds: usize, thresholds: &[f64], seed: u64) -> Result<(OsnnBaseline, OsnnSearch)> {
    if thresholds.is_empty() {
        return Err(Error::config("OSNN threshold grid is empty"));
    }
    let n_classes = index.class_counts().len();
    if n_classes < 2 {
        return Err(Error::data("OSNN needs at least two classes"));
    }
    if n_classes == 2 {
        let threshold = thresholds[thresholds.len() / 2];
        return Ok((OsnnBaseline::new(index, threshold)?, OsnnSearch { threshold, scores: Vec::new() }));
    }
    let rot = rotation_folds(index.labels(), folds, seed)?;
    let mut sums = vec![0.0; thresholds.len()];
    for fold in &rot {
        let sub = index.subset(&fold.train)?;
        let ratios: Vec<f64> =
            fold.validation.iter().map(|&i| osnn_ratio(&sub, index.point(i)).map(|r| r.1)).collect::<Result<_>>()?;
        for (s, &t) in sums.iter_mut().zip(thresholds) {
            *s += unknown_geo_mean(&fold.is_unknown, ratios.iter().map(|&r| r > t));
        }
    }
    let scores: Vec<(f64, f64)> = thresholds.iter().zip(&sums).map(|(&t, &s)| (t, s / rot.len() as f64)).collect();
    let mut best = scores[0];
    for &s in &scores[1..] {
        if s.1 > best.1 {
            best = s;
        }
    }
    Ok((OsnnBaseline::new(index, best.0)?, OsnnSearch { threshold: best.0, scores }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn index() -> NeighborIndex {
        let pts = Array2::from_shape_vec((4, 1), vec![0.0, 1.0, 4.0, 5.0]).unwrap();
        NeighborIndex::new(pts, vec![ClassId(1), ClassId(1), ClassId(2), ClassId(2)]).unwrap()
    }

    #[test]
    fn ratio_is_zero_on_training_point() {
        let b = OsnnBaseline::new(index(), 0.5).unwrap();
        assert_eq!(osnn_ratio(b.index(), array![1.0].view()).unwrap(), (ClassId(1), 0.0));
        assert_eq!(osnn_classify(&b, array![4.0].view()).unwrap(), ClassId(2));
    }

    #[test]
    fn threshold_rejects_ambiguous_points() {
        let b = OsnnBaseline::new(index(), 0.5).unwrap();
        // d(t) = 1.5, d(u) = 1.5: midway between the classes.
        assert_eq!(osnn_classify(&b, array![2.5].view()).unwrap(), ClassId::UNKNOWN);
        let lenient = OsnnBaseline::new(index(), 1.0).unwrap();
        assert_eq!(osnn_classify(&lenient, array![2.5].view()).unwrap(), ClassId(1));
    }

    #[test]
    fn invalid_threshold() {
        assert!(OsnnBaseline::new(index(), 0.0).is_err());
        assert!(OsnnBaseline::new(index(), 1.5).is_err());
    }

    #[test]
    fn default_grid() {
        let t = OsnnBaseline::default_thresholds();
        assert_eq!(t.len(), 11);
        assert_eq!(t[0], 0.5);
        assert_eq!(t[10], 1.0);
        assert_eq!(t[5], 0.75);
    }
}
