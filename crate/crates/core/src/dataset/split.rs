use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ClassId, Dataset, UNKNOWN_NAME};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Train,
    Test,
}

/// Training set of known classes plus a test set in which every sample of
/// an unseen class carries `unknown_label`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenSetSplit {
    pub train: Dataset,
    pub test: Dataset,
    pub known_class_ids: BTreeSet<ClassId>,
    pub unknown_label: ClassId,
    /// Row indices into the source dataset.
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// Test labels before unknown classes were collapsed.
    pub test_original_labels: Vec<ClassId>,
    pub source_class_names: BTreeMap<ClassId, String>,
}

impl OpenSetSplit {
    /// Writes `sample_index,role,original_label,effective_label`, one row per
    /// source sample, sorted by sample index.
    pub fn write_manifest<W: Write>(&self, writer: W) -> Result<()> {
        let name = |id: ClassId| -> String {
            if id.is_unknown() {
                UNKNOWN_NAME.to_string()
            } else {
                self.source_class_names.get(&id).cloned().unwrap_or_else(|| id.to_string())
            }
        };
        let mut rows: Vec<(usize, SplitRole, ClassId, ClassId)> = Vec::new();
        for (k, &i) in self.train_indices.iter().enumerate() {
            let l = self.train.labels()[k];
            rows.push((i, SplitRole::Train, l, l));
        }
        for (k, &i) in self.test_indices.iter().enumerate() {
            rows.push((i, SplitRole::Test, self.test_original_labels[k], self.test.labels()[k]));
        }
        rows.sort_by_key(|r| r.0);
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["sample_index", "role", "original_label", "effective_label"])?;
        for (i, role, orig, eff) in rows {
            let role = match role {
                SplitRole::Train => "train",
                SplitRole::Test => "test",
            };
            w.write_record([i.to_string(), role.to_string(), name(orig), name(eff)])?;
        }
        w.flush().map_err(|source| Error::Io { path: "<manifest>".into(), source })?;
        Ok(())
    }
}

/// Per-class training counts: `floor(fraction * count)` for each class, then
/// the shortfall against `floor(fraction * total)` is handed out one sample
/// at a time to the largest fractional remainders (ties to the lowest id).
pub fn stratified_counts(
    counts: &BTreeMap<ClassId, usize>,
    fraction: f64,
) -> BTreeMap<ClassId, usize> {
    let total: usize = counts.values().sum();
    // guards against 0.8 * 901 = 720.80000000000007 style noise near integers
    let target = (fraction * total as f64 + 1e-9).floor() as usize;
    let mut out = BTreeMap::new();
    let mut remainders = Vec::new();
    for (&c, &n) in counts {
        let exact = fraction * n as f64;
        let base = (exact + 1e-9).floor() as usize;
        out.insert(c, base.min(n));
        remainders.push((exact - base as f64, c));
    }
    let assigned: usize = out.values().sum();
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = target.saturating_sub(assigned);
    for (_, c) in remainders {
        if left == 0 {
            break;
        }
        let slot = out.get_mut(&c).unwrap();
        if *slot < counts[&c] {
            *slot += 1;
            left -= 1;
        }
    }
    out
}

/// Stratified open-set split: `train_fraction` of each known class goes to
/// training, the remaining known samples and every unknown-class sample go to
/// test with unknown labels collapsed to [`ClassId::UNKNOWN`].
pub fn make_open_set_split(
    data: &Dataset,
    known_classes: &BTreeSet<ClassId>,
    train_fraction: f64,
    seed: u64,
) -> Result<OpenSetSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!("train_fraction must be in (0,1), got {train_fraction}")));
    }
    let all: BTreeSet<ClassId> = data.classes().into_iter().collect();
    if known_classes.is_superset(&all) {
        return Err(Error::config("known classes cover every class; there is no open set"));
    }
    split_open_set(data, known_classes, train_fraction, seed)
}

/// Shared by [`make_open_set_split`] and the mixture generator, which also
/// accepts `train_fraction == 1` and a closed label set.
pub(crate) fn split_open_set(
    data: &Dataset,
    known_classes: &BTreeSet<ClassId>,
    train_fraction: f64,
    seed: u64,
) -> Result<OpenSetSplit> {
    if known_classes.is_empty() {
        return Err(Error::config("known class set is empty"));
    }
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::config(format!("train_fraction must be in (0,1], got {train_fraction}")));
    }
    if known_classes.contains(&ClassId::UNKNOWN) {
        return Err(Error::config("the unknown sentinel cannot be a known class"));
    }
    let counts = data.class_counts();
    let mut known_counts = BTreeMap::new();
    for c in known_classes {
        let n = counts.get(c).copied().unwrap_or(0);
        if n < 2 {
            return Err(Error::data(format!(
                "known class {} has {n} samples; at least 2 are required",
                data.class_name(*c).unwrap_or("?")
            )));
        }
        known_counts.insert(*c, n);
    }
    let take = stratified_counts(&known_counts, train_fraction);

    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, &l) in data.labels().iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (c, mut members) in by_class {
        if let Some(&k) = take.get(&c) {
            let mut rng = seed::rng(seed::derive(seed, c.0 as u64));
            members.shuffle(&mut rng);
            train_idx.extend_from_slice(&members[..k]);
            test_idx.extend_from_slice(&members[k..]);
        } else {
            test_idx.extend(members);
        }
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    if test_idx.is_empty() {
        return Err(Error::data("split produced an empty test set"));
    }

    let mut train_names = BTreeMap::new();
    for c in known_classes {
        train_names.insert(*c, data.class_name(*c).unwrap_or_default().to_string());
    }
    let mut test_names = train_names.clone();
    test_names.insert(ClassId::UNKNOWN, UNKNOWN_NAME.to_string());

    let train_raw = data.subset(&train_idx);
    let train = train_raw.with_labels(train_raw.labels().to_vec(), train_names)?;
    let test_raw = data.subset(&test_idx);
    let original = test_raw.labels().to_vec();
    let effective = original
        .iter()
        .map(|l| if known_classes.contains(l) { *l } else { ClassId::UNKNOWN })
        .collect();
    let test = test_raw.with_labels(effective, test_names)?;

    Ok(OpenSetSplit {
        train,
        test,
        known_class_ids: known_classes.clone(),
        unknown_label: ClassId::UNKNOWN,
        train_indices: train_idx,
        test_indices: test_idx,
        test_original_labels: original,
        source_class_names: data.class_names().clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{builtin, Builtin};

    fn known(data: &Dataset, names: &[&str]) -> BTreeSet<ClassId> {
        names.iter().map(|n| data.class_by_name(n).unwrap()).collect()
    }

    #[test]
    fn digits_counts() {
        let data = builtin(Builtin::Digits).unwrap();
        let k = known(&data, &["0", "1", "2", "3", "4"]);
        let s = make_open_set_split(&data, &k, 0.8, 7).unwrap();
        assert_eq!(s.train.n_samples(), 720);
        assert_eq!(s.test.n_samples(), 1077);
        let unknown = s.test.labels().iter().filter(|l| l.is_unknown()).count();
        assert_eq!(unknown, 896);
    }

    #[test]
    fn iris_counts() {
        let data = builtin(Builtin::Iris).unwrap();
        let k = known(&data, &["setosa", "virginica"]);
        let s = make_open_set_split(&data, &k, 0.75, 3).unwrap();
        assert!((75..=76).contains(&s.train.n_samples()));
        for (_, n) in s.train.class_counts() {
            assert!(n == 37 || n == 38);
        }
        let unknown = s.test.labels().iter().filter(|l| l.is_unknown()).count();
        assert_eq!(unknown, 50);
    }

    #[test]
    fn deterministic_given_seed() {
        let data = builtin(Builtin::Iris).unwrap();
        let k = known(&data, &["setosa", "virginica"]);
        let a = make_open_set_split(&data, &k, 0.75, 11).unwrap();
        let b = make_open_set_split(&data, &k, 0.75, 11).unwrap();
        let c = make_open_set_split(&data, &k, 0.75, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train_indices, c.train_indices);
    }

    #[test]
    fn partition_is_label_correct_and_disjoint() {
        let data = builtin(Builtin::Iris).unwrap();
        let k = known(&data, &["versicolor"]);
        let s = make_open_set_split(&data, &k, 0.5, 1).unwrap();
        assert!(s.train.labels().iter().all(|l| k.contains(l)));
        let train: BTreeSet<_> = s.train_indices.iter().collect();
        assert!(s.test_indices.iter().all(|i| !train.contains(i)));
        assert_eq!(s.train_indices.len() + s.test_indices.len(), 150);
        for (orig, eff) in s.test_original_labels.iter().zip(s.test.labels()) {
            if k.contains(orig) {
                assert_eq!(orig, eff);
            } else {
                assert!(eff.is_unknown());
            }
        }
    }

    #[test]
    fn rejects_closed_set() {
        let data = builtin(Builtin::Iris).unwrap();
        let k = known(&data, &["setosa", "versicolor", "virginica"]);
        assert!(make_open_set_split(&data, &k, 0.8, 0).is_err());
    }

    #[test]
    fn rejects_bad_fraction() {
        let data = builtin(Builtin::Iris).unwrap();
        let k = known(&data, &["setosa"]);
        assert!(make_open_set_split(&data, &k, 1.0, 0).is_err());
        assert!(make_open_set_split(&data, &k, 0.0, 0).is_err());
    }

    #[test]
    fn rejects_tiny_known_class() {
        let text = "x,label\n1,a\n2,b\n3,b\n4,c\n";
        let data = crate::dataset::read_csv(text.as_bytes(), "label").unwrap();
        let k: BTreeSet<ClassId> = [ClassId(1), ClassId(2)].into();
        assert!(matches!(make_open_set_split(&data, &k, 0.5, 0), Err(Error::InvalidData(_))));
    }

    #[test]
    fn largest_remainder_rounding() {
        let counts: BTreeMap<ClassId, usize> =
            [(ClassId(1), 178), (ClassId(2), 182), (ClassId(3), 177), (ClassId(4), 183), (ClassId(5), 181)]
                .into();
        let take = stratified_counts(&counts, 0.8);
        assert_eq!(take.values().sum::<usize>(), 720);
        for (c, k) in &take {
            let exact = 0.8 * counts[c] as f64;
            assert!((*k as f64 - exact.round()).abs() <= 1.0);
        }
    }

    #[test]
    fn manifest_lists_every_sample() {
        let data = builtin(Builtin::Iris).unwrap();
        let k = known(&data, &["setosa", "virginica"]);
        let s = make_open_set_split(&data, &k, 0.75, 3).unwrap();
        let mut buf = Vec::new();
        s.write_manifest(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "sample_index,role,original_label,effective_label");
        assert_eq!(lines.len(), 151);
        assert!(text.contains(",test,versicolor,unknown"));
    }
}
