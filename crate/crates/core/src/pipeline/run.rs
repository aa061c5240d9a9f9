use std::collections::BTreeSet;
use std::io::Write;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bundle::{FitLog, FittedModel, ModelBundle, Provenance, QueryRecord, BUNDLE_SCHEMA_VERSION};
use super::config::{DataSource, ExperimentConfig, ForestSearch, Method};
use crate::dataset::{builtin, load_csv, make_open_set_split, standardize, synth_mixture, ClassId, Dataset, OpenSetSplit, StandardizationParams};
use crate::error::{Error, Result, StageExt};
use crate::eval::{aggregate_runs, compute_metrics, confusion, AggregateReport, ConfusionMatrix, MetricsReport, METRIC_NAMES};
use crate::forest::{fit_forest, grid_search_cv, Forest, ForestConfig, ForestGrid};
use crate::metric::{build_pairs, fit_metric, GPFitReport, MetricModel};
use crate::osr::{fit_kosnn, fit_osnn, NeighborIndex};
use crate::proximity::{rf_gap, symmetrize};
use crate::seed;

const TAG_SPLIT: u64 = 0x5011;
const TAG_FOREST: u64 = 0xF0AE;
const TAG_PAIRS: u64 = 0x9A15;
const TAG_OSR: u64 = 0x05A0;

/// Loads csv or built-in data (mixtures are generated per seed).
pub fn load_source(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Csv { path, label_column } => load_csv(path, label_column),
        DataSource::Builtin { name } => builtin(*name),
        DataSource::Mixture(_) => Err(Error::config("mixture sources are generated, not loaded")),
    }
}

/// Open-set split for one run.
pub fn prepare_split(config: &ExperimentConfig, run_seed: u64) -> Result<OpenSetSplit> {
    match &config.data {
        DataSource::Mixture(spec) => {
            let spec = crate::dataset::MixtureSpec { seed: run_seed, ..spec.clone() };
            synth_mixture(&spec)
        }
        source => {
            let data = load_source(source)?;
            let known = config
                .known_classes
                .iter()
                .map(|name| data.class_by_name(name).ok_or_else(|| Error::config(format!("no class named {name:?}"))))
                .collect::<Result<BTreeSet<ClassId>>>()?;
            make_open_set_split(&data, &known, config.train_fraction, seed::derive(run_seed, TAG_SPLIT))
        }
    }
}

/// Stages shared by every method for one training set: standardization,
/// forest selection and fitting, and optionally the learned metric.
#[derive(Clone, Debug)]
pub struct SharedFit {
    pub standardization: StandardizationParams,
    pub train: Dataset,
    pub forest: Forest,
    pub forest_config: ForestConfig,
    pub metric: Option<(MetricModel, GPFitReport)>,
    pub seed: u64,
}

pub fn fit_shared(config: &ExperimentConfig, train: &Dataset, run_seed: u64, with_metric: bool) -> Result<SharedFit> {
    let (train_z, standardization) = standardize(train, None).stage("standardize")?;
    let forest_seed = seed::derive(run_seed, TAG_FOREST);
    let forest_config = match config.forest_search {
        ForestSearch::Fixed => ForestConfig { seed: forest_seed, ..config.forest.clone() },
        ForestSearch::Full | ForestSearch::Fast => {
            let grid = if config.forest_search == ForestSearch::Full {
                ForestGrid::full(forest_seed)
            } else {
                ForestGrid::fast(forest_seed)
            };
            let t = Instant::now();
            let best = grid_search_cv(&train_z, &grid, config.cv_folds).stage("forest-grid-search")?.best;
            log::info!("forest grid search over {} configs took {:.1?}: {best:?}", grid.len(), t.elapsed());
            best
        }
    };
    let forest = fit_forest(&train_z, &forest_config).stage("fit-forest")?;
    let metric = if with_metric {
        Some(learn_metric(config, &forest, &train_z, run_seed)?)
    } else {
        None
    };
    Ok(SharedFit { standardization, train: train_z, forest, forest_config, metric, seed: run_seed })
}

fn learn_metric(
    config: &ExperimentConfig,
    forest: &Forest,
    train_z: &Dataset,
    run_seed: u64,
) -> Result<(MetricModel, GPFitReport)> {
    let raw = rf_gap(forest, train_z).stage("proximity")?;
    let p = symmetrize(&raw);
    let pairs = build_pairs(train_z, &p, config.metric.max_pairs, seed::derive(run_seed, TAG_PAIRS)).stage("pairs")?;
    let init = MetricModel::initial(train_z.n_features(), &pairs);
    let t = Instant::now();
    let (model, report) = fit_metric(&pairs, &init, &config.metric.optimizer).stage("metric")?;
    log::info!(
        "metric fit on {} pairs: evidence {:.4} -> {:.4} in {} iterations ({:?}, {:.1?})",
        report.pair_count,
        report.initial_lml,
        report.final_lml,
        report.iterations,
        report.stop_reason,
        t.elapsed()
    );
    Ok((model, report))
}

/// Fits `method` on top of the shared stages.
pub fn fit_method(config: &ExperimentConfig, method: Method, shared: &SharedFit) -> Result<ModelBundle> {
    let d = shared.train.n_features();
    let mut log = FitLog { forest: Some(shared.forest_config.clone()), ..FitLog::default() };
    let metric = if method.uses_metric() {
        let (m, report) = shared
            .metric
            .as_ref()
            .ok_or_else(|| Error::config(format!("method {method} needs the learned metric")))?;
        log.gp = Some(report.clone());
        m.clone()
    } else {
        MetricModel::identity(d)
    };
    let osr_seed = seed::derive(shared.seed, TAG_OSR);
    let model = match method {
        Method::ClosedSet => FittedModel::ClosedSet { forest: shared.forest.clone() },
        Method::Kosnn | Method::RfKosnn => {
            let (classifier, search) = fit_kosnn(
                shared.forest.clone(),
                metric.clone(),
                &shared.train,
                config.cv_folds,
                &config.kosnn_grid,
                osr_seed,
            )
            .stage("kosnn")?;
            log.kosnn = Some(search);
            FittedModel::Kosnn { classifier }
        }
        Method::Osnn | Method::RfOsnn => {
            let points = metric.transform_matrix(shared.train.features())?;
            let index = NeighborIndex::new(points, shared.train.labels().to_vec())?;
            let (baseline, search) =
                fit_osnn(index, config.cv_folds, &config.osnn_thresholds, osr_seed).stage("osnn")?;
            log.osnn = Some(search);
            FittedModel::Osnn { baseline }
        }
    };
    let created_unix_secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    Ok(ModelBundle {
        schema_version: BUNDLE_SCHEMA_VERSION,
        method,
        provenance: Provenance {
            config_hash: config.hash(),
            seed: shared.seed,
            created_unix_secs,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        standardization: shared.standardization.clone(),
        feature_names: shared.train.feature_names().to_vec(),
        class_names: shared.train.class_names().clone(),
        metric,
        model,
        fit_log: log,
    })
}

/// Standardize, select and fit the forest, learn the metric if the method
/// needs it, then fit the open-set stage.
pub fn fit_pipeline(config: &ExperimentConfig, method: Method, train: &Dataset, run_seed: u64) -> Result<ModelBundle> {
    let shared = fit_shared(config, train, run_seed, method.uses_metric())?;
    fit_method(config, method, &shared)
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
    pub records: Vec<QueryRecord>,
}

/// Classifies raw test features and scores them against `truth`, whose
/// labels are known class ids or [`ClassId::UNKNOWN`].
pub fn evaluate(bundle: &ModelBundle, features: ArrayView2<'_, f64>, truth: &[ClassId]) -> Result<Evaluation> {
    if features.nrows() != truth.len() {
        return Err(Error::DimensionMismatch { expected: features.nrows(), got: truth.len() });
    }
    if features.ncols() != bundle.standardization.dim() {
        return Err(Error::DimensionMismatch { expected: bundle.standardization.dim(), got: features.ncols() });
    }
    let records: Vec<QueryRecord> =
        (0..features.nrows()).into_par_iter().map(|i| bundle.diagnose(features.row(i))).collect::<Result<_>>()?;
    let predicted: Vec<ClassId> = records.iter().map(|r| r.decision).collect();
    let cm = confusion(truth, &predicted, &bundle.known_classes())?;
    let metrics = compute_metrics(&cm);
    Ok(Evaluation { confusion: cm, metrics, records })
}

/// Test labels of a dataset re-expressed in the bundle's class ids by
/// name; names the bundle does not know become unknown.
pub fn align_labels(bundle: &ModelBundle, data: &Dataset) -> Vec<ClassId> {
    data.labels()
        .iter()
        .map(|&l| data.class_name(l).map_or(ClassId::UNKNOWN, |n| bundle.class_for_name(n)))
        .collect()
}

/// Report file contents: provenance plus metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub method: Method,
    pub seed: u64,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub aggregate: AggregateReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproOutcome {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodSummary>,
}

impl ReproOutcome {
    pub fn summary(&self, method: Method) -> Option<&AggregateReport> {
        self.methods.iter().find(|m| m.method == method).map(|m| &m.aggregate)
    }

    /// Plain-text table: one row per method, `mean ± std` in percent.
    pub fn write_table<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "{:<12}", "method")?;
        for name in METRIC_NAMES {
            write!(w, " {name:>17}")?;
        }
        writeln!(w)?;
        for m in &self.methods {
            write!(w, "{:<12}", m.method.as_str())?;
            for s in &m.aggregate.metrics {
                write!(w, " {:>17}", format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Runs `methods` for every seed of `config`, sharing the forest and the
/// learned metric between methods within a seed.
pub fn run_repro(config: &ExperimentConfig, methods: &[Method]) -> Result<ReproOutcome> {
    config.validate()?;
    let need_metric = methods.iter().any(|m| m.uses_metric());
    let mut per_method: Vec<Vec<MetricsReport>> = vec![Vec::new(); methods.len()];
    for &s in &config.seeds {
        let t = Instant::now();
        let split = prepare_split(config, s).stage("split")?;
        let shared = fit_shared(config, &split.train, s, need_metric)?;
        for (slot, &method) in methods.iter().enumerate() {
            let bundle = fit_method(config, method, &shared)?;
            let eval = evaluate(&bundle, split.test.features(), split.test.labels()).stage("evaluate")?;
            log::info!(
                "seed {s} {method}: accuracy {:.4}, recall_osr {:.4}, geo_mean_pr {:.4}",
                eval.metrics.accuracy,
                eval.metrics.recall_osr,
                eval.metrics.geo_mean_pr
            );
            per_method[slot].push(eval.metrics);
        }
        log::info!("seed {s} done in {:.1?}", t.elapsed());
    }
    let methods = methods
        .iter()
        .zip(per_method)
        .map(|(&method, reports)| Ok(MethodSummary { method, aggregate: aggregate_runs(&reports)? }))
        .collect::<Result<_>>()?;
    Ok(ReproOutcome { config_hash: config.hash(), seeds: config.seeds.clone(), methods })
}
