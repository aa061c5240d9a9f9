use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Builtin, MixtureSpec};
use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::metric::OptimizerSettings;
use crate::osr::{KosnnGrid, OsnnBaseline};

/// Classification method run by the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// The forest alone; never predicts unknown.
    ClosedSet,
    /// Nearest-neighbor ratio threshold in the standardized space.
    Osnn,
    /// Nearest-neighbor ratio threshold in the learned space.
    RfOsnn,
    /// KNN ratio with a tail model in the standardized space.
    Kosnn,
    /// KNN ratio with a tail model in the learned space.
    RfKosnn,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::ClosedSet, Method::Osnn, Method::RfOsnn, Method::Kosnn, Method::RfKosnn];

    pub fn uses_metric(self) -> bool {
        matches!(self, Method::RfOsnn | Method::RfKosnn)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::ClosedSet => "closed-set",
            Method::Osnn => "osnn",
            Method::RfOsnn => "rf-osnn",
            Method::Kosnn => "kosnn",
            Method::RfKosnn => "rf-kosnn",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Csv {
        path: PathBuf,
        label_column: String,
    },
    Builtin {
        name: Builtin,
    },
    /// Per-run seeds replace the mixture's own seed.
    Mixture(MixtureSpec),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Mixture(MixtureSpec::default())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForestSearch {
    /// Trees 100-500, depth 5-50 or unlimited, both feature rules and criteria.
    Full,
    /// Trees {100, 300, 500}, depth {10, 30, unlimited}.
    Fast,
    /// Use `forest` as given.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricSettings {
    pub max_pairs: usize,
    pub optimizer: OptimizerSettings,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings { max_pairs: 2000, optimizer: OptimizerSettings::default() }
    }
}

/// Everything needed to run one experiment; mirrors the TOML config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Known class names. Ignored for mixtures, which carry their own.
    pub known_classes: Vec<String>,
    pub train_fraction: f64,
    pub forest_search: ForestSearch,
    /// Fixed forest settings; its seed is replaced per run.
    pub forest: ForestConfig,
    pub cv_folds: usize,
    pub metric: MetricSettings,
    pub kosnn_grid: KosnnGrid,
    pub osnn_thresholds: Vec<f64>,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::default(),
            known_classes: Vec::new(),
            train_fraction: 0.8,
            forest_search: ForestSearch::Full,
            forest: ForestConfig::default(),
            cv_folds: 5,
            metric: MetricSettings::default(),
            kosnn_grid: KosnnGrid::default(),
            osnn_thresholds: OsnnBaseline::default_thresholds(),
            method: Method::RfKosnn,
            seeds: vec![0],
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml_de(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must not be empty"));
        }
        if self.cv_folds < 2 {
            return Err(Error::config("cv_folds must be at least 2"));
        }
        if self.metric.max_pairs < 2 {
            return Err(Error::config("metric.max_pairs must be at least 2"));
        }
        if self.osnn_thresholds.is_empty() || self.osnn_thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(Error::config("osnn_thresholds must be nonempty values in (0,1]"));
        }
        self.kosnn_grid.validate()?;
        match &self.data {
            DataSource::Mixture(spec) => spec.validate()?,
            _ => {
                if self.known_classes.is_empty() {
                    return Err(Error::config("known_classes is required for csv and built-in data"));
                }
                if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
                    return Err(Error::config("train_fraction must be in (0,1)"));
                }
            }
        }
        if self.forest_search == ForestSearch::Fixed {
            self.forest.validate()?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Settings of the named reproduction experiment.
    pub fn preset(experiment: Experiment) -> Self {
        let base = ExperimentConfig::default();
        match experiment {
            Experiment::Synthetic => base,
            Experiment::Iris => ExperimentConfig {
                data: DataSource::Builtin { name: Builtin::Iris },
                known_classes: vec!["setosa".into(), "virginica".into()],
                train_fraction: 0.75,
                ..base
            },
            Experiment::Digits => ExperimentConfig {
                data: DataSource::Builtin { name: Builtin::Digits },
                known_classes: (0..5).map(|d| d.to_string()).collect(),
                train_fraction: 0.8,
                ..base
            },
        }
    }
}

fn toml_de(text: &str) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| Error::config(e.to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Synthetic,
    Iris,
    Digits,
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(Experiment::Synthetic),
            "iris" => Ok(Experiment::Iris),
            "digits" => Ok(Experiment::Digits),
            other => Err(Error::config(format!("unknown experiment {other:?}"))),
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::Synthetic => "synthetic",
            Experiment::Iris => "iris",
            Experiment::Digits => "digits",
        })
    }
}
