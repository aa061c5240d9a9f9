//! Open-set evaluation over `C + 1` classes: confusion matrices, summary
//! metrics, multi-run aggregation and 2-D decision grids.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::ClassId;
use crate::error::{Error, Result};
use crate::osr::OpenSetPredict;

/// Counts indexed by (true, predicted); known classes in ascending id order
/// followed by the unknown class in the last row and column.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: Vec<ClassId>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(known: &[ClassId], counts: Vec<Vec<u64>>) -> Result<Self> {
        let mut classes = known.to_vec();
        classes.sort();
        classes.dedup();
        if classes.len() != known.len() || classes.iter().any(|c| c.is_unknown()) {
            return Err(Error::data("known classes must be distinct and exclude the unknown label"));
        }
        let m = classes.len() + 1;
        if counts.len() != m || counts.iter().any(|r| r.len() != m) {
            return Err(Error::DimensionMismatch { expected: m, got: counts.len() });
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn known_classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    /// Number of known classes `C`.
    pub fn n_known(&self) -> usize {
        self.classes.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, a: usize) -> u64 {
        self.counts[a].iter().sum()
    }

    pub fn col_sum(&self, b: usize) -> u64 {
        self.counts.iter().map(|r| r[b]).sum()
    }

    /// Row/column position of a label.
    pub fn position(&self, label: ClassId) -> Option<usize> {
        if label.is_unknown() {
            Some(self.classes.len())
        } else {
            self.classes.binary_search(&label).ok()
        }
    }

    /// Writes the matrix with a `true\predicted` header; `names` maps ids
    /// to display names and falls back to the id.
    pub fn write_csv<W: Write>(&self, writer: W, names: impl Fn(ClassId) -> String) -> Result<()> {
        let mut labels: Vec<ClassId> = self.classes.clone();
        labels.push(ClassId::UNKNOWN);
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(labels.iter().map(|&c| names(c)));
        w.write_record(&header)?;
        for (a, row) in self.counts.iter().enumerate() {
            let mut rec = vec![names(labels[a])];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::Io { path: "<confusion csv>".into(), source: e })?;
        Ok(())
    }
}

/// Tallies `(true, predicted)` pairs over the known classes plus unknown.
pub fn confusion(truth: &[ClassId], predicted: &[ClassId], known: &[ClassId]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: predicted.len() });
    }
    let m = known.len() + 1;
    let mut cm = ConfusionMatrix::new(known, vec![vec![0; m]; m])?;
    for (&t, &p) in truth.iter().zip(predicted) {
        let a = cm.position(t).ok_or_else(|| Error::data(format!("true label {t} is not a known class")))?;
        let b = cm.position(p).ok_or_else(|| Error::data(format!("predicted label {p} is not a known class")))?;
        cm.counts[a][b] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class: ClassId,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// How the known-class F1 scores treat the unknown class.
pub const F1_CONVENTION: &str = "known-class precision counts unknown samples predicted as that class as false \
positives; known-class recall counts samples of that class predicted unknown as false negatives; micro-F1 is the F1 \
of pooled precision and recall, macro-F1 the F1 of class-averaged precision and recall";

/// The seven summary metrics, all in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub acc_known_cls: f64,
    pub recall_osr: f64,
    pub precision_osr: f64,
    pub geo_mean_pr: f64,
    pub mic_f1: f64,
    pub mac_f1: f64,
    pub n_test: u64,
    pub n_unknown: u64,
    pub per_class: Vec<ClassScores>,
    /// Quantities whose denominator was zero and were set to 0.
    pub degenerate: Vec<String>,
    pub f1_convention: String,
}

pub const METRIC_NAMES: [&str; 7] =
    ["accuracy", "acc_known_cls", "recall_osr", "precision_osr", "geo_mean_pr", "mic_f1", "mac_f1"];

impl MetricsReport {
    /// Metric values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [f64; 7] {
        [
            self.accuracy,
            self.acc_known_cls,
            self.recall_osr,
            self.precision_osr,
            self.geo_mean_pr,
            self.mic_f1,
            self.mac_f1,
        ]
    }
}

fn ratio(num: f64, den: f64, name: &str, degenerate: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        degenerate.push(name.to_string());
        0.0
    } else {
        num / den
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let c = cm.n_known();
    let u = c;
    let mut degenerate = Vec::new();
    let total = cm.total() as f64;
    let trace: u64 = (0..=c).map(|a| cm.counts[a][a]).sum();
    let accuracy = ratio(trace as f64, total, "accuracy", &mut degenerate);

    let known_correct: u64 = (0..c).map(|a| cm.counts[a][a]).sum();
    let known_total: u64 = (0..c).map(|a| cm.row_sum(a)).sum();
    let acc_known_cls = ratio(known_correct as f64, known_total as f64, "acc_known_cls", &mut degenerate);

    let uu = cm.counts[u][u] as f64;
    let recall_osr = ratio(uu, cm.row_sum(u) as f64, "recall_osr", &mut degenerate);
    let precision_osr = ratio(uu, cm.col_sum(u) as f64, "precision_osr", &mut degenerate);
    let geo_mean_pr = (precision_osr * recall_osr).sqrt();

    let mut per_class = Vec::with_capacity(c);
    let (mut tp_sum, mut fp_sum, mut fn_sum) = (0u64, 0u64, 0u64);
    for a in 0..c {
        let tp = cm.counts[a][a];
        let fp = cm.col_sum(a) - tp;
        let fn_ = cm.row_sum(a) - tp;
        let id = cm.classes[a];
        let precision = ratio(tp as f64, (tp + fp) as f64, &format!("precision[{id}]"), &mut degenerate);
        let recall = ratio(tp as f64, (tp + fn_) as f64, &format!("recall[{id}]"), &mut degenerate);
        per_class.push(ClassScores { class: id, tp, fp, fn_, precision, recall, f1: f1(precision, recall) });
        tp_sum += tp;
        fp_sum += fp;
        fn_sum += fn_;
    }
    let mic_p = ratio(tp_sum as f64, (tp_sum + fp_sum) as f64, "micro_precision", &mut degenerate);
    let mic_r = ratio(tp_sum as f64, (tp_sum + fn_sum) as f64, "micro_recall", &mut degenerate);
    let mac_p = per_class.iter().map(|s| s.precision).sum::<f64>() / c.max(1) as f64;
    let mac_r = per_class.iter().map(|s| s.recall).sum::<f64>() / c.max(1) as f64;

    MetricsReport {
        accuracy,
        acc_known_cls,
        recall_osr,
        precision_osr,
        geo_mean_pr,
        mic_f1: f1(mic_p, mic_r),
        mac_f1: f1(mac_p, mac_r),
        n_test: cm.total(),
        n_unknown: cm.row_sum(u),
        per_class,
        degenerate,
        f1_convention: F1_CONVENTION.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation of every metric over several runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n_runs: usize,
    pub metrics: Vec<MetricSummary>,
    pub per_run: Vec<MetricsReport>,
}

impl AggregateReport {
    pub fn get(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn mean(&self, name: &str) -> f64 {
        self.get(name).map_or(f64::NAN, |m| m.mean)
    }
}

pub fn aggregate_runs(reports: &[MetricsReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::data("no reports to aggregate"));
    }
    let n = reports.len() as f64;
    let metrics = METRIC_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let vals: Vec<f64> = reports.iter().map(|r| r.values()[k]).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let std = if reports.len() > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            MetricSummary { name: name.to_string(), mean, std }
        })
        .collect();
    Ok(AggregateReport { n_runs: reports.len(), metrics, per_run: reports.to_vec() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl GridBounds {
    /// Bounding box of the rows of a two-column matrix, widened by `margin`
    /// times its extent on each side.
    pub fn around(points: &Array2<f64>, margin: f64) -> Result<Self> {
        if points.ncols() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: points.ncols() });
        }
        let col = |k: usize| {
            let c = points.column(k);
            let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let pad = margin * (hi - lo).max(1e-9);
            (lo - pad, hi + pad)
        };
        let ((x_min, x_max), (y_min, y_max)) = (col(0), col(1));
        Ok(GridBounds { x_min, x_max, y_min, y_max })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub x: f64,
    pub y: f64,
    pub decision: ClassId,
}

/// Decisions on a `resolution x resolution` lattice spanning `bounds`
/// (corners included), `y` in the outer loop.
pub fn decision_grid<P: OpenSetPredict + ?Sized>(
    clf: &P,
    bounds: GridBounds,
    resolution: usize,
) -> Result<Vec<GridPoint>> {
    if clf.input_dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: clf.input_dim() });
    }
    if resolution == 0 {
        return Err(Error::config("grid resolution must be positive"));
    }
    let coord = |lo: f64, hi: f64, i: usize| {
        if resolution == 1 {
            lo
        } else {
            lo + (hi - lo) * i as f64 / (resolution - 1) as f64
        }
    };
    let mut lattice = Array2::zeros((resolution * resolution, 2));
    for iy in 0..resolution {
        for ix in 0..resolution {
            let r = iy * resolution + ix;
            lattice[[r, 0]] = coord(bounds.x_min, bounds.x_max, ix);
            lattice[[r, 1]] = coord(bounds.y_min, bounds.y_max, iy);
        }
    }
    let decisions = clf.predict_batch(lattice.view())?;
    Ok(lattice
        .rows()
        .into_iter()
        .zip(decisions)
        .map(|(p, decision)| GridPoint { x: p[0], y: p[1], decision })
        .collect())
}

pub fn write_grid_csv<W: Write>(grid: &[GridPoint], writer: W, names: impl Fn(ClassId) -> String) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x", "y", "decision"])?;
    for p in grid {
        w.write_record([p.x.to_string(), p.y.to_string(), names(p.decision)])?;
    }
    w.flush().map_err(|e| Error::Io { path: "<grid csv>".into(), source: e })?;
    Ok(())
}
