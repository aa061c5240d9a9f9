use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use osrf::dataset::{load_csv, synth_mixture, write_csv, MixtureSpec};
use osrf::eval::{decision_grid, write_grid_csv, GridBounds};
use osrf::pipeline::{
    align_labels, evaluate, fit_pipeline, prepare_split, run_repro, write_query_records, DataSource, EvalReport,
    Experiment, ExperimentConfig, ForestSearch, Method, ModelBundle,
};
use osrf::Error;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "osrf", version, about = "Open-set recognition with random-forest proximities")]
struct Cli {
    /// Run seed; replaces the seeds listed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Use the reduced forest grid.
    #[arg(long, global = true)]
    fast: bool,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample the mixture and write train/test CSVs plus a split manifest.
    Synth {
        /// Per-component sample counts, comma separated, in component order.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
    },
    /// Fit a model bundle.
    Fit {
        #[arg(long)]
        method: Option<Method>,
        /// Training CSV; without it the configured data source is split.
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long, default_value = "label")]
        label_column: String,
    },
    /// Score a bundle on a labelled test CSV.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value = "label")]
        label_column: String,
        /// Lattice size of the decision grid written for 2-D data.
        #[arg(long, default_value_t = 100)]
        grid_resolution: usize,
    },
    /// Run every method over several seeds and tabulate mean ± std.
    Repro {
        experiment: Experiment,
        #[arg(long, default_value_t = 10)]
        runs: u64,
        /// Subset of methods, comma separated.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
    },
    /// Write the learned per-feature weights of a bundle.
    ExportWeights {
        #[arg(long)]
        model: PathBuf,
    },
    /// Write decisions of a 2-D bundle on a regular lattice.
    ExportGrid {
        #[arg(long)]
        model: PathBuf,
        /// x_min,x_max,y_min,y_max in raw feature units.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "data")]
        bounds: Option<Vec<f64>>,
        /// CSV whose bounding box (plus a 10% margin) defines the lattice.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "label")]
        label_column: String,
        #[arg(long, default_value_t = 200)]
        resolution: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) => 1,
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    match &cli.command {
        Command::Synth { counts } => synth(cli, &out, counts.as_deref()),
        Command::Fit { method, train, label_column } => fit(cli, &out, *method, train.as_deref(), label_column),
        Command::Eval { model, test, label_column, grid_resolution } => {
            eval(&out, model, test, label_column, *grid_resolution)
        }
        Command::Repro { experiment, runs, methods } => repro(cli, &out, *experiment, *runs, methods.as_deref()),
        Command::ExportWeights { model } => {
            let bundle = ModelBundle::load(model)?;
            let path = out.join("weights.csv");
            bundle.metric.write_weights_csv(create(&path)?, &bundle.feature_names)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::ExportGrid { model, bounds, data, label_column, resolution } => {
            let bundle = ModelBundle::load(model)?;
            let bounds = match (bounds, data) {
                (Some(b), _) if b.len() == 4 => GridBounds { x_min: b[0], x_max: b[1], y_min: b[2], y_max: b[3] },
                (Some(b), _) => {
                    return Err(Error::Config(format!("--bounds takes four values, got {}", b.len())))
                }
                (None, Some(path)) => GridBounds::around(&load_csv(path, label_column)?.features().to_owned(), 0.1)?,
                (None, None) => return Err(Error::Config("export-grid needs --bounds or --data".into())),
            };
            let path = out.join("grid.csv");
            write_grid(&bundle, bounds, *resolution, &path)?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn base_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    apply_flags(cli, &mut config);
    config.validate()?;
    Ok(config)
}

fn apply_flags(cli: &Cli, config: &mut ExperimentConfig) {
    if let Some(s) = cli.seed {
        config.seeds = vec![s];
    }
    if cli.fast {
        config.forest_search = ForestSearch::Fast;
    }
}

fn synth(cli: &Cli, out: &Path, counts: Option<&[usize]>) -> Result<(), Error> {
    let config = base_config(cli)?;
    let mut spec = match &config.data {
        DataSource::Mixture(spec) => spec.clone(),
        _ => MixtureSpec::default(),
    };
    if let Some(counts) = counts {
        if counts.len() != spec.components.len() {
            return Err(Error::Config(format!(
                "--counts has {} values but the mixture has {} components",
                counts.len(),
                spec.components.len()
            )));
        }
        for (c, &n) in spec.components.iter_mut().zip(counts) {
            c.count = n;
        }
    }
    spec.seed = config.seeds[0];
    let split = synth_mixture(&spec)?;
    write_csv(&split.train, create(&out.join("train.csv"))?, "label")?;
    write_csv(&split.test, create(&out.join("test.csv"))?, "label")?;
    split.write_manifest(create(&out.join("manifest.csv"))?)?;
    let spec_path = out.join("mixture.json");
    serde_json::to_writer_pretty(create(&spec_path)?, &spec)?;
    write_provenance(out, "synth", &config, spec.seed, &["train.csv", "test.csv", "manifest.csv", "mixture.json"])?;
    println!("train {} / test {} samples in {}", split.train.n_samples(), split.test.n_samples(), out.display());
    Ok(())
}

fn fit(cli: &Cli, out: &Path, method: Option<Method>, train: Option<&Path>, label_column: &str) -> Result<(), Error> {
    let mut config = base_config(cli)?;
    if let Some(m) = method {
        config.method = m;
    }
    let seed = config.seeds[0];
    let mut files = vec!["model.json", "fit_log.json"];
    let train = match train {
        Some(path) => load_csv(path, label_column)?,
        None => {
            let split = prepare_split(&config, seed)?;
            write_csv(&split.train, create(&out.join("train.csv"))?, label_column)?;
            write_csv(&split.test, create(&out.join("test.csv"))?, label_column)?;
            split.write_manifest(create(&out.join("manifest.csv"))?)?;
            files.extend(["train.csv", "test.csv", "manifest.csv"]);
            split.train
        }
    };
    let bundle = fit_pipeline(&config, config.method, &train, seed)?;
    bundle.save(&out.join("model.json"))?;
    let log = json!({
        "config_hash": bundle.provenance.config_hash,
        "method": bundle.method,
        "seed": seed,
        "fit_log": bundle.fit_log,
    });
    serde_json::to_writer_pretty(create(&out.join("fit_log.json"))?, &log)?;
    write_provenance(out, "fit", &config, seed, &files)?;
    println!("{} bundle written to {}", bundle.method, out.join("model.json").display());
    Ok(())
}

fn eval(out: &Path, model: &Path, test: &Path, label_column: &str, resolution: usize) -> Result<(), Error> {
    let bundle = ModelBundle::load(model)?;
    let data = load_csv(test, label_column)?;
    if data.feature_names() != bundle.feature_names.as_slice() {
        return Err(Error::InvalidData(format!(
            "test columns {:?} do not match the model's {:?}",
            data.feature_names(),
            bundle.feature_names
        )));
    }
    let truth = align_labels(&bundle, &data);
    let evaluation = evaluate(&bundle, data.features(), &truth)?;
    let report = EvalReport {
        config_hash: bundle.provenance.config_hash.clone(),
        method: bundle.method,
        seed: bundle.provenance.seed,
        metrics: evaluation.metrics.clone(),
    };
    serde_json::to_writer_pretty(create(&out.join("report.json"))?, &report)?;
    evaluation.confusion.write_csv(create(&out.join("confusion.csv"))?, |c| bundle.class_name(c))?;
    write_query_records(&bundle, &truth, &evaluation.records, create(&out.join("diagnostics.csv"))?)?;
    if bundle.feature_names.len() == 2 {
        let bounds = GridBounds::around(&data.features().to_owned(), 0.1)?;
        write_grid(&bundle, bounds, resolution, &out.join("grid.csv"))?;
    }
    let m = &evaluation.metrics;
    println!(
        "accuracy {:.4}  acc_known_cls {:.4}  recall_osr {:.4}  precision_osr {:.4}  geo_mean_pr {:.4}  mic_f1 {:.4}  mac_f1 {:.4}",
        m.accuracy, m.acc_known_cls, m.recall_osr, m.precision_osr, m.geo_mean_pr, m.mic_f1, m.mac_f1
    );
    Ok(())
}

fn repro(cli: &Cli, out: &Path, experiment: Experiment, runs: u64, methods: Option<&[Method]>) -> Result<(), Error> {
    if runs == 0 {
        return Err(Error::Config("--runs must be positive".into()));
    }
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(experiment),
    };
    let first = cli.seed.unwrap_or(0);
    config.seeds = (first..first + runs).collect();
    if cli.fast {
        config.forest_search = ForestSearch::Fast;
    }
    let methods = methods.unwrap_or(&Method::ALL);
    let outcome = run_repro(&config, methods)?;
    serde_json::to_writer_pretty(create(&out.join("repro.json"))?, &outcome)?;
    let mut table = Vec::new();
    writeln!(table, "# {experiment}, {runs} runs, config {}", outcome.config_hash).map_err(|e| io_err(out, e))?;
    outcome.write_table(&mut table).map_err(|e| io_err(out, e))?;
    let path = out.join("table.txt");
    fs::write(&path, &table).map_err(|e| io_err(&path, e))?;
    print!("{}", String::from_utf8_lossy(&table));
    Ok(())
}

fn write_grid(bundle: &ModelBundle, bounds: GridBounds, resolution: usize, path: &Path) -> Result<(), Error> {
    let grid = decision_grid(bundle, bounds, resolution)?;
    write_grid_csv(&grid, create(path)?, |c| bundle.class_name(c))
}

/// Records which config produced the files of one command.
fn write_provenance(out: &Path, command: &str, config: &ExperimentConfig, seed: u64, files: &[&str]) -> Result<(), Error> {
    let record = json!({
        "command": command,
        "config_hash": config.hash(),
        "seed": seed,
        "files": files,
        "config": config,
    });
    serde_json::to_writer_pretty(create(&out.join(format!("{command}_provenance.json")))?, &record)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}
