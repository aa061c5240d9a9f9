use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::split::split_open_set;
use super::{ClassId, Dataset, OpenSetSplit};
use crate::error::{Error, Result};
use crate::seed;

/// One Gaussian component of a labelled mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub mean: Vec<f64>,
    /// Row-major `D x D` covariance; must be symmetric positive definite.
    pub covariance: Vec<Vec<f64>>,
    pub count: usize,
    pub class_id: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixtureSpec {
    pub components: Vec<MixtureComponent>,
    /// Fraction of each known class revealed for training.
    pub known_fraction: f64,
    pub known_classes: Vec<u32>,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        MixtureSpec::seven_component(0)
    }
}

impl MixtureSpec {
    /// Seven 2-D components: known classes 1-3 on a wide triangle, unknown
    /// class 4 in the gap between them and classes 5-7 outside the triangle.
    /// Known components are larger so that the known share of the test set
    /// is about one third.
    pub fn seven_component(seed: u64) -> Self {
        let iso = |v: f64| vec![vec![v, 0.0], vec![0.0, v]];
        let comp = |x: f64, y: f64, cov: Vec<Vec<f64>>, count: usize, class_id: u32| MixtureComponent {
            mean: vec![x, y],
            covariance: cov,
            count,
            class_id,
        };
        MixtureSpec {
            components: vec![
                comp(0.0, 0.0, iso(0.8), 500, 1),
                comp(6.0, 0.0, iso(0.8), 500, 2),
                comp(3.0, 5.0, iso(0.8), 500, 3),
                comp(3.0, 1.8, vec![vec![0.35, 0.0], vec![0.0, 0.25]], 140, 4),
                comp(-4.0, 5.0, iso(0.6), 140, 5),
                comp(10.0, 5.0, iso(0.6), 140, 6),
                comp(3.0, -4.5, vec![vec![1.2, 0.3], vec![0.3, 0.4]], 140, 7),
            ],
            known_fraction: 0.8,
            known_classes: vec![1, 2, 3],
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }

    pub fn class_ids(&self) -> BTreeSet<u32> {
        self.components.iter().map(|c| c.class_id).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::config("mixture needs at least one component of positive dimension"));
        }
        for (i, c) in self.components.iter().enumerate() {
            if c.mean.len() != d || c.covariance.len() != d || c.covariance.iter().any(|r| r.len() != d) {
                return Err(Error::config(format!("component {i}: inconsistent dimensions")));
            }
            if c.class_id == 0 {
                return Err(Error::config(format!("component {i}: class id 0 is reserved")));
            }
            cholesky(&c.covariance).map_err(|e| Error::config(format!("component {i}: {e}")))?;
        }
        if !(self.known_fraction > 0.0 && self.known_fraction <= 1.0) {
            return Err(Error::config("known_fraction must be in (0,1]"));
        }
        let ids = self.class_ids();
        if self.known_classes.is_empty() {
            return Err(Error::config("known_classes is empty"));
        }
        if let Some(k) = self.known_classes.iter().find(|k| !ids.contains(k)) {
            return Err(Error::config(format!("known class {k} has no component")));
        }
        Ok(())
    }
}

/// Lower Cholesky factor of a small dense SPD matrix.
fn cholesky(a: &[Vec<f64>]) -> std::result::Result<Vec<Vec<f64>>, String> {
    let n = a.len();
    for i in 0..n {
        for j in 0..i {
            if (a[i][j] - a[j][i]).abs() > 1e-12 * (1.0 + a[i][j].abs()) {
                return Err("covariance is not symmetric".into());
            }
        }
    }
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let v = a[i][i] - s;
                if !(v > 0.0) {
                    return Err("covariance is not positive definite".into());
                }
                l[i][j] = v.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Draws every component (mean + Cholesky factor times standard normals) and
/// splits the result into an open-set train/test pair.
pub fn synth_mixture(spec: &MixtureSpec) -> Result<OpenSetSplit> {
    let data = sample_mixture(spec)?;
    let known: BTreeSet<ClassId> = spec.known_classes.iter().map(|&k| ClassId(k)).collect();
    split_open_set(&data, &known, spec.known_fraction, seed::derive(spec.seed, 0x5917))
}

/// Draws the full labelled mixture without splitting it.
pub fn sample_mixture(spec: &MixtureSpec) -> Result<Dataset> {
    spec.validate()?;
    let d = spec.dim();
    let n: usize = spec.components.iter().map(|c| c.count).sum();
    if n == 0 {
        return Err(Error::config("mixture has no samples"));
    }
    let mut values = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (ci, comp) in spec.components.iter().enumerate() {
        let l = cholesky(&comp.covariance).map_err(Error::config)?;
        let mut rng = seed::rng(seed::derive(spec.seed, ci as u64));
        let mut z = vec![0.0; d];
        for _ in 0..comp.count {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            for i in 0..d {
                let x: f64 = comp.mean[i] + (0..=i).map(|k| l[i][k] * z[k]).sum::<f64>();
                values.push(x);
            }
            labels.push(ClassId(comp.class_id));
        }
    }
    let features = Array2::from_shape_vec((n, d), values).map_err(|e| Error::data(e.to_string()))?;
    let feature_names = (1..=d).map(|k| format!("x{k}")).collect();
    let class_names: BTreeMap<ClassId, String> =
        spec.class_ids().into_iter().map(|c| (ClassId(c), format!("class_{c}"))).collect();
    Dataset::new(features, labels, feature_names, class_names)
}
