use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use super::Method;
use crate::dataset::{ClassId, StandardizationParams, UNKNOWN_NAME};
use crate::error::{Error, Result};
use crate::forest::{Forest, ForestConfig};
use crate::metric::{GPFitReport, MetricModel};
use crate::osr::{osnn_classify, osnn_ratio, KosnnSearch, OpenSetClassifier, OpenSetPredict, OsnnBaseline, OsnnSearch};

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub created_unix_secs: u64,
    pub crate_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    ClosedSet { forest: Forest },
    Kosnn { classifier: OpenSetClassifier },
    Osnn { baseline: OsnnBaseline },
}

/// Hyperparameter choices and optimizer outcome recorded at fit time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitLog {
    pub forest: Option<ForestConfig>,
    pub gp: Option<GPFitReport>,
    pub kosnn: Option<KosnnSearch>,
    pub osnn: Option<OsnnSearch>,
}

/// Everything needed to classify raw feature vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub schema_version: u32,
    pub method: Method,
    pub provenance: Provenance,
    pub standardization: StandardizationParams,
    pub feature_names: Vec<String>,
    /// Known class names; the unknown label is implicit.
    pub class_names: BTreeMap<ClassId, String>,
    /// Identity for methods that do not learn a metric.
    pub metric: MetricModel,
    pub model: FittedModel,
    pub fit_log: FitLog,
}

/// Per-query audit record; fields a method does not compute are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub decision: ClassId,
    pub forest_label: Option<ClassId>,
    pub knn_label: Option<ClassId>,
    pub mean_distance: Option<f64>,
    pub counter_distance: Option<f64>,
    pub ratio: Option<f64>,
    pub exceedance: Option<f64>,
}

impl ModelBundle {
    pub fn known_classes(&self) -> Vec<ClassId> {
        self.class_names.keys().copied().collect()
    }

    pub fn class_name(&self, id: ClassId) -> String {
        if id.is_unknown() {
            UNKNOWN_NAME.to_string()
        } else {
            self.class_names.get(&id).cloned().unwrap_or_else(|| id.to_string())
        }
    }

    /// Known class with this name, or the unknown label.
    pub fn class_for_name(&self, name: &str) -> ClassId {
        self.class_names.iter().find(|(_, n)| n.as_str() == name).map_or(ClassId::UNKNOWN, |(id, _)| *id)
    }

    fn standardized(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Ok(Array1::from(self.standardization.apply(x)?))
    }

    /// Classifies one raw (unstandardized) feature vector with diagnostics.
    pub fn diagnose(&self, x: ArrayView1<'_, f64>) -> Result<QueryRecord> {
        let z = self.standardized(x)?;
        Ok(match &self.model {
            FittedModel::ClosedSet { forest } => {
                let label = forest.predict(z.view())?;
                QueryRecord {
                    decision: label,
                    forest_label: Some(label),
                    knn_label: None,
                    mean_distance: None,
                    counter_distance: None,
                    ratio: None,
                    exceedance: None,
                }
            }
            FittedModel::Kosnn { classifier } => {
                let d = classifier.diagnose(z.view())?;
                QueryRecord {
                    decision: d.decision,
                    forest_label: Some(d.forest_label),
                    knn_label: Some(d.knn_label),
                    mean_distance: Some(d.mean_distance),
                    counter_distance: Some(d.counter_distance),
                    ratio: Some(d.ratio),
                    exceedance: Some(d.exceedance),
                }
            }
            FittedModel::Osnn { baseline } => {
                let xt = Array1::from(self.metric.transform(z.view())?);
                let (label, rho) = osnn_ratio(baseline.index(), xt.view())?;
                QueryRecord {
                    decision: osnn_classify(baseline, xt.view())?,
                    forest_label: None,
                    knn_label: Some(label),
                    mean_distance: None,
                    counter_distance: None,
                    ratio: Some(rho),
                    exceedance: None,
                }
            }
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.flush().map_err(|e| Error::Io { path: path.into(), source: e })?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
        let bundle: ModelBundle = serde_json::from_reader(BufReader::new(file))?;
        if bundle.schema_version != BUNDLE_SCHEMA_VERSION {
            return Err(Error::data(format!(
                "unsupported bundle schema version {} (expected {BUNDLE_SCHEMA_VERSION})",
                bundle.schema_version
            )));
        }
        Ok(bundle)
    }
}

impl OpenSetPredict for ModelBundle {
    fn input_dim(&self) -> usize {
        self.standardization.dim()
    }

    fn predict_one(&self, x: ArrayView1<'_, f64>) -> Result<ClassId> {
        Ok(self.diagnose(x)?.decision)
    }
}

pub fn write_query_records<W: Write>(
    bundle: &ModelBundle,
    truth: &[ClassId],
    records: &[QueryRecord],
    writer: W,
) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let name = |v: Option<ClassId>| v.map(|c| bundle.class_name(c)).unwrap_or_default();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "index",
        "true_label",
        "decision",
        "forest_label",
        "knn_label",
        "mean_distance",
        "counter_distance",
        "ratio",
        "exceedance",
    ])?;
    for (i, (t, r)) in truth.iter().zip(records).enumerate() {
        w.write_record([
            i.to_string(),
            bundle.class_name(*t),
            bundle.class_name(r.decision),
            name(r.forest_label),
            name(r.knn_label),
            opt(r.mean_distance),
            opt(r.counter_distance),
            opt(r.ratio),
            opt(r.exceedance),
        ])?;
    }
    w.flush().map_err(|e| Error::Io { path: "<diagnostics csv>".into(), source: e })?;
    Ok(())
}
