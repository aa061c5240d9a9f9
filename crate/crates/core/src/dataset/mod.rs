//! Data ingestion, standardization, open-set splits and Gaussian mixtures.

mod builtin;
mod csv_io;
mod mixture;
mod split;

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use builtin::{builtin, Builtin};
pub use csv_io::{load_csv, read_csv, write_csv};
pub use mixture::{sample_mixture, synth_mixture, MixtureComponent, MixtureSpec};
pub use split::{make_open_set_split, stratified_counts, OpenSetSplit, SplitRole};

/// Class identifier. Known classes are numbered from 1; [`ClassId::UNKNOWN`]
/// is the reserved open-set label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl ClassId {
    pub const UNKNOWN: ClassId = ClassId(0);

    pub fn is_unknown(self) -> bool {
        self == Self::UNKNOWN
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_unknown() {
            f.write_str("unknown")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

pub const UNKNOWN_NAME: &str = "unknown";

/// Feature matrix with integer class labels and column metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<ClassId>,
    feature_names: Vec<String>,
    class_names: BTreeMap<ClassId, String>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<ClassId>,
        feature_names: Vec<String>,
        class_names: BTreeMap<ClassId, String>,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(Error::data(format!("dataset must be non-empty, got {n}x{d}")));
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: labels.len() });
        }
        if feature_names.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: feature_names.len() });
        }
        if let Some(bad) = features.iter().find(|v| !v.is_finite()) {
            return Err(Error::data(format!("non-finite feature value {bad}")));
        }
        if let Some(bad) = labels.iter().find(|l| !class_names.contains_key(l)) {
            return Err(Error::data(format!("label {bad} has no class name")));
        }
        Ok(Dataset { features, labels, feature_names, class_names })
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn class_names(&self) -> &BTreeMap<ClassId, String> {
        &self.class_names
    }

    pub fn class_name(&self, id: ClassId) -> Option<&str> {
        self.class_names.get(&id).map(String::as_str)
    }

    /// Looks up a class id by its display name.
    pub fn class_by_name(&self, name: &str) -> Option<ClassId> {
        self.class_names.iter().find(|(_, n)| n.as_str() == name).map(|(id, _)| *id)
    }

    /// Distinct labels present in the data, ascending.
    pub fn classes(&self) -> Vec<ClassId> {
        let mut c: Vec<ClassId> = self.class_counts().into_keys().collect();
        c.sort();
        c
    }

    pub fn class_counts(&self) -> BTreeMap<ClassId, usize> {
        let mut counts = BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }

    /// Rows at `indices`, in the given order, with the same metadata.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
        }
    }

    /// Same rows with replaced features (used by transforms).
    pub fn with_features(&self, features: Array2<f64>) -> Result<Dataset> {
        if features.dim() != self.features.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.features.ncols(),
                got: features.ncols(),
            });
        }
        Ok(Dataset { features, ..self.clone() })
    }

    pub(crate) fn with_labels(
        &self,
        labels: Vec<ClassId>,
        class_names: BTreeMap<ClassId, String>,
    ) -> Result<Dataset> {
        Dataset::new(self.features.clone(), labels, self.feature_names.clone(), class_names)
    }
}

/// Per-column affine standardization learned from training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub means: Vec<f64>,
    pub std_devs: Vec<f64>,
}

/// Columns with a spread below this are treated as constant.
const CONSTANT_COLUMN_EPS: f64 = 1e-12;

impl StandardizationParams {
    /// Column means and population standard deviations of `features`.
    pub fn fit(features: ArrayView2<'_, f64>) -> Self {
        let n = features.nrows() as f64;
        let mut means = Vec::with_capacity(features.ncols());
        let mut std_devs = Vec::with_capacity(features.ncols());
        for (k, col) in features.axis_iter(Axis(1)).enumerate() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let mut sd = var.sqrt();
            if sd < CONSTANT_COLUMN_EPS {
                log::warn!("feature column {k} is constant; using unit scale");
                sd = 1.0;
            }
            means.push(mean);
            std_devs.push(sd);
        }
        StandardizationParams { means, std_devs }
    }

    pub fn identity(d: usize) -> Self {
        StandardizationParams { means: vec![0.0; d], std_devs: vec![1.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn apply(&self, x: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
        self.check(x.len())?;
        Ok(x.iter()
            .zip(self.means.iter().zip(&self.std_devs))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn apply_matrix(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check(x.ncols())?;
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v - self.means[k]) / self.std_devs[k];
            }
        }
        Ok(out)
    }

    pub fn invert_matrix(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check(z.ncols())?;
        let mut out = z.to_owned();
        for mut row in out.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = *v * self.std_devs[k] + self.means[k];
            }
        }
        Ok(out)
    }

    fn check(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: d });
        }
        Ok(())
    }
}

/// Standardizes `data` with `params`, or with statistics fitted on `data`
/// when `params` is `None`. Returns the parameters that were used.
pub fn standardize(
    data: &Dataset,
    params: Option<&StandardizationParams>,
) -> Result<(Dataset, StandardizationParams)> {
    let params = match params {
        Some(p) => p.clone(),
        None => StandardizationParams::fit(data.features()),
    };
    let z = params.apply_matrix(data.features())?;
    Ok((data.with_features(z)?, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy(features: Array2<f64>) -> Dataset {
        let n = features.nrows();
        let d = features.ncols();
        let names = (0..d).map(|k| format!("f{k}")).collect();
        let mut classes = BTreeMap::new();
        classes.insert(ClassId(1), "a".to_string());
        Dataset::new(features, vec![ClassId(1); n], names, classes).unwrap()
    }

    #[test]
    fn centering_sums_to_zero() {
        let data = toy(array![[1.0], [2.0], [3.0]]);
        let (z, params) = standardize(&data, None).unwrap();
        assert_eq!(params.means, vec![2.0]);
        assert!(z.features().sum().abs() < 1e-12);
    }

    #[test]
    fn constant_column_gets_unit_scale() {
        let data = toy(array![[5.0, 1.0], [5.0, 2.0], [5.0, 4.0]]);
        let (z, params) = standardize(&data, None).unwrap();
        assert_eq!(params.std_devs[0], 1.0);
        assert!(z.features().column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inverse_recovers_original() {
        let x = array![[1.5, -3.0, 12.0], [2.25, 7.0, 11.0], [-4.0, 0.5, 10.0], [0.0, 0.0, 9.5]];
        let data = toy(x.clone());
        let (z, params) = standardize(&data, None).unwrap();
        let back = params.invert_matrix(z.features()).unwrap();
        for (a, b) in back.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardized_moments() {
        let x = array![[1.0, 10.0], [4.0, 20.0], [9.0, 15.0], [16.0, 40.0], [25.0, 5.0]];
        let (z, _) = standardize(&toy(x), None).unwrap();
        for col in z.features().axis_iter(Axis(1)) {
            let n = col.len() as f64;
            let mean = col.sum() / n;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-10);
            assert!((sd - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn params_dimension_mismatch() {
        let data = toy(array![[1.0, 2.0]]);
        let params = StandardizationParams::identity(3);
        assert!(matches!(
            standardize(&data, Some(&params)),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn test_data_uses_training_params() {
        let train = toy(array![[0.0], [2.0]]);
        let test = toy(array![[4.0]]);
        let (_, params) = standardize(&train, None).unwrap();
        let (z, _) = standardize(&test, Some(&params)).unwrap();
        assert_eq!(z.features()[[0, 0]], 3.0);
    }

    #[test]
    fn rejects_unnamed_label() {
        let mut classes = BTreeMap::new();
        classes.insert(ClassId(1), "a".to_string());
        let r = Dataset::new(array![[0.0]], vec![ClassId(2)], vec!["x".into()], classes);
        assert!(r.is_err());
    }
}
