//! RF-GAP proximities and their symmetrization.

use std::io::Write;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassId, Dataset};
use crate::error::{Error, Result};
use crate::forest::Forest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProximityKind {
    Raw,
    Symmetrized,
}

/// Dense `N x N` proximity matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProximityMatrix {
    values: Array2<f64>,
    kind: ProximityKind,
    /// Samples with no out-of-bag tree; their raw rows are zero.
    empty_rows: Vec<usize>,
}

impl ProximityMatrix {
    pub fn from_values(values: Array2<f64>, kind: ProximityKind) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::DimensionMismatch { expected: values.nrows(), got: values.ncols() });
        }
        Ok(ProximityMatrix { values, kind, empty_rows: Vec::new() })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn kind(&self) -> ProximityKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    pub fn empty_rows(&self) -> &[usize] {
        &self.empty_rows
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = (0..self.n()).map(|j| format!("s{j}")).collect();
        w.write_record(&header)?;
        for row in self.values.rows() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::Io { path: "<proximity csv>".into(), source: e })?;
        Ok(())
    }
}

/// In-bag members of one leaf with their multiplicities, plus their total.
struct LeafBag {
    members: Vec<(usize, u32)>,
    total: u32,
}

/// RF-GAP proximity of every training sample to every other.
///
/// Row `i` averages, over the trees where `i` is out of bag, the in-bag
/// multiplicity of each `j` in `i`'s leaf divided by that leaf's total
/// in-bag multiplicity. The diagonal is zero because `i` is never in-bag in
/// the trees that contribute to its row.
pub fn rf_gap(forest: &Forest, train: &Dataset) -> Result<ProximityMatrix> {
    let n = train.n_samples();
    let boot = forest.bootstrap();
    if boot.n_samples() != n {
        return Err(Error::DimensionMismatch { expected: boot.n_samples(), got: n });
    }
    let leaves = forest.leaf_assignments(train.features())?;

    let bags: Vec<Vec<LeafBag>> = forest
        .trees()
        .par_iter()
        .enumerate()
        .map(|(t, tree)| {
            let mut bags: Vec<LeafBag> =
                (0..tree.nodes().len()).map(|_| LeafBag { members: Vec::new(), total: 0 }).collect();
            for (j, &leaf) in leaves[t].iter().enumerate() {
                let c = boot.multiplicity(t, j);
                if c > 0 {
                    bags[leaf].members.push((j, c));
                    bags[leaf].total += c;
                }
            }
            bags
        })
        .collect();

    let rows: Vec<(Vec<f64>, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; n];
            let mut oob = 0usize;
            for (t, tree_bags) in bags.iter().enumerate() {
                if !boot.is_oob(t, i) {
                    continue;
                }
                oob += 1;
                let bag = &tree_bags[leaves[t][i]];
                let total = bag.total as f64;
                for &(j, c) in &bag.members {
                    row[j] += c as f64 / total;
                }
            }
            if oob > 0 {
                let s = oob as f64;
                row.iter_mut().for_each(|v| *v /= s);
            }
            (row, oob == 0)
        })
        .collect();

    let mut values = Array2::zeros((n, n));
    let mut empty_rows = Vec::new();
    for (i, (row, empty)) in rows.into_iter().enumerate() {
        if empty {
            empty_rows.push(i);
        }
        values.row_mut(i).assign(&ndarray::Array1::from(row));
    }
    if !empty_rows.is_empty() {
        log::warn!("{} samples are in-bag in every tree; their proximity rows are zero", empty_rows.len());
    }
    Ok(ProximityMatrix { values, kind: ProximityKind::Raw, empty_rows })
}

/// `(P + P^T) / 2`.
pub fn symmetrize(p: &ProximityMatrix) -> ProximityMatrix {
    let n = p.n();
    let mut values = Array2::zeros((n, n));
    for i in 0..n {
        values[[i, i]] = p.values[[i, i]];
        for j in i + 1..n {
            let v = 0.5 * (p.values[[i, j]] + p.values[[j, i]]);
            values[[i, j]] = v;
            values[[j, i]] = v;
        }
    }
    ProximityMatrix { values, kind: ProximityKind::Symmetrized, empty_rows: p.empty_rows.clone() }
}

/// Per-sample class label maximizing the summed proximity to that class
/// (ties to the lowest id); `None` for rows with no out-of-bag tree.
pub fn proximity_vote(p: &ProximityMatrix, labels: &[ClassId]) -> Result<Vec<Option<ClassId>>> {
    if labels.len() != p.n() {
        return Err(Error::DimensionMismatch { expected: p.n(), got: labels.len() });
    }
    let mut classes: Vec<ClassId> = labels.to_vec();
    classes.sort();
    classes.dedup();
    let index = |c: ClassId| classes.binary_search(&c).unwrap();
    Ok((0..p.n())
        .map(|i| {
            if p.empty_rows.binary_search(&i).is_ok() {
                return None;
            }
            let mut scores = vec![0.0; classes.len()];
            for (j, &l) in labels.iter().enumerate() {
                scores[index(l)] += p.values[[i, j]];
            }
            let mut best = 0;
            for (k, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = k;
                }
            }
            Some(classes[best])
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn symmetrize_averages() {
        let p = ProximityMatrix::from_values(array![[0.0, 0.4], [0.2, 0.0]], ProximityKind::Raw).unwrap();
        let s = symmetrize(&p);
        assert!((s.get(0, 1) - 0.3).abs() < 1e-15);
        assert_eq!(s.get(0, 1), s.get(1, 0));
        assert_eq!(s.kind(), ProximityKind::Symmetrized);
        assert_eq!(symmetrize(&s), s);
    }

    #[test]
    fn non_square_rejected() {
        assert!(ProximityMatrix::from_values(Array2::zeros((2, 3)), ProximityKind::Raw).is_err());
    }

    #[test]
    fn vote_takes_heaviest_class() {
        let p = ProximityMatrix::from_values(
            array![[0.0, 0.3, 0.3, 0.4], [0.5, 0.0, 0.5, 0.0], [0.1, 0.1, 0.0, 0.8], [0.2, 0.2, 0.6, 0.0]],
            ProximityKind::Raw,
        )
        .unwrap();
        let labels = [ClassId(1), ClassId(1), ClassId(2), ClassId(2)];
        let v = proximity_vote(&p, &labels).unwrap();
        assert_eq!(v, vec![Some(ClassId(2)), Some(ClassId(1)), Some(ClassId(2)), Some(ClassId(2))]);
    }
}
