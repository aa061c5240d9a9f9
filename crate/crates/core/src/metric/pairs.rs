use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::proximity::{ProximityKind, ProximityMatrix};
use crate::seed;

/// Absolute per-dimension difference of two training points and their
/// proximity-derived dissimilarity `1 - P(i, j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    pub i: usize,
    pub j: usize,
    pub d_vec: Vec<f64>,
    pub target: f64,
}

impl PairSample {
    pub fn new(train: &Dataset, p: &ProximityMatrix, i: usize, j: usize) -> PairSample {
        let (a, b) = (train.row(i), train.row(j));
        PairSample {
            i,
            j,
            d_vec: a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).collect(),
            target: 1.0 - p.get(i, j),
        }
    }
}

/// Unordered training pairs for metric learning, sorted by `(i, j)`.
///
/// All pairs are used when there are at most `max_pairs`. Otherwise
/// `max_pairs / 2` same-class pairs and the rest cross-class are drawn
/// without replacement; a short stratum hands its quota to the other.
pub fn build_pairs(train: &Dataset, p: &ProximityMatrix, max_pairs: usize, seed: u64) -> Result<Vec<PairSample>> {
    let n = train.n_samples();
    if n < 2 {
        return Err(Error::data("need at least two training samples to form pairs"));
    }
    if max_pairs < 2 {
        return Err(Error::config(format!("max_pairs must be at least 2, got {max_pairs}")));
    }
    if p.kind() != ProximityKind::Symmetrized {
        return Err(Error::config("pair targets require a symmetrized proximity matrix"));
    }
    if p.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: p.n() });
    }
    let total = n * (n - 1) / 2;
    let mut chosen: Vec<(usize, usize)> = Vec::with_capacity(total.min(max_pairs));
    if total <= max_pairs {
        for i in 0..n {
            for j in i + 1..n {
                chosen.push((i, j));
            }
        }
    } else {
        let labels = train.labels();
        let mut same = Vec::new();
        let mut cross = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if labels[i] == labels[j] {
                    same.push((i as u32, j as u32));
                } else {
                    cross.push((i as u32, j as u32));
                }
            }
        }
        let mut n_same = (max_pairs / 2).min(same.len());
        let n_cross = (max_pairs - n_same).min(cross.len());
        n_same = (max_pairs - n_cross).min(same.len());
        let mut rng = seed::rng(seed);
        for k in index::sample(&mut rng, same.len(), n_same) {
            chosen.push((same[k].0 as usize, same[k].1 as usize));
        }
        for k in index::sample(&mut rng, cross.len(), n_cross) {
            chosen.push((cross[k].0 as usize, cross[k].1 as usize));
        }
        chosen.sort_unstable();
    }
    Ok(chosen.into_iter().map(|(i, j)| PairSample::new(train, p, i, j)).collect())
}
