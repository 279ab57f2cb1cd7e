//! The `modp` command-line driver.
//!
//! Every command reads earlier artifacts, writes its own into the output
//! directory, and is a pure function of its inputs, configuration and seed.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use modp_core::dataset::{bootstrap_resample, crosstab};
use modp_core::metrics::evaluate;
use modp_core::privacy::privacy_report;
use modp_core::schema::{infer_schema, Directives, RawTable};
use modp_core::synthesis::{synthesize, CellWeight};
use modp_core::testbed::{generate, PopulationSpec};
use modp_core::training::{train, LossRecord};
use modp_core::{CategoricalSchema, MultiBladeModel, ResponseMatrix, SynthesisResult};

use config::{Layer, RunConfig, OUTPUT_DIR_ENV};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] modp_core::Error),
}

impl CliError {
    /// 1 usage or configuration, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(modp_core::Error::NonFiniteLoss { .. }) => 3,
            CliError::Core(modp_core::Error::InvalidParameter(_)) => 1,
            CliError::Core(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "modp", version, about = "Synthetic categorical data from minus-one predictions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightArg {
    Abs,
    Signed,
    Excess,
}

#[derive(Debug, Default, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (also `MODP_OUTPUT_DIR`).
    #[arg(long, short = 'o', global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub blades: Option<usize>,
    #[arg(long, global = true)]
    pub reduced_features: Option<usize>,
    #[arg(long, global = true)]
    pub mse_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub zval_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Randomized-response pass-through probability.
    #[arg(long, global = true)]
    pub rr_p: Option<f64>,
    #[arg(long, global = true)]
    pub fix_structural_zeros: bool,
    #[arg(long, global = true)]
    pub instances: Option<u32>,
    #[arg(long, global = true)]
    pub threshold_quantile: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub cell_weight: Option<WeightArg>,
    /// Metric pseudocount c, also used by the two-instance weights.
    #[arg(long, global = true)]
    pub pseudocount: Option<f64>,
    #[arg(long, global = true)]
    pub d0: Option<f64>,
    #[arg(long, global = true)]
    pub z0: Option<f64>,
    /// Privacy audit sample size.
    #[arg(long, global = true)]
    pub sample: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Infer a schema from a raw table and directives.
    Schema {
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        directives: Option<PathBuf>,
    },
    /// Encode a raw table with a frozen schema.
    Encode {
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Train a multi-blade model on an encoded matrix.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Draw synthetic rows from a trained model.
    Synthesize {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Compare synthetic and true crosstabs.
    Evaluate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        synth: Option<PathBuf>,
    },
    /// Multiplicity and causal-rank audit of a synthesis.
    Privacy {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        synth: Option<PathBuf>,
        /// Defaults to the synthetic matrix path with extension `sidecar.csv`.
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
    /// Accuracy of a bootstrap resample against the data itself.
    Bootstrap {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Sample a population with known structure.
    Testbed {
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

pub const SCHEMA_FILE: &str = "schema.toml";
pub const MATRIX_FILE: &str = "data.modp";
pub const MODEL_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "loss_history.csv";
pub const SYNTH_FILE: &str = "synthetic.modp";
pub const SIDECAR_FILE: &str = "synthetic.sidecar.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_PLOTS: &str = "metrics_plots";
pub const PRIVACY_FILE: &str = "privacy.csv";
pub const PRIVACY_PLOTS: &str = "privacy_plots";
pub const BOOTSTRAP_FILE: &str = "bootstrap.csv";
pub const TESTBED_TABLE: &str = "testbed.csv";
pub const TESTBED_SCHEMA: &str = "testbed_schema.toml";
pub const TESTBED_TRUTH: &str = "testbed_truth.csv";
pub const TESTBED_LABELS: &str = "testbed_labels.csv";

impl GlobalArgs {
    fn layer(&self) -> Layer {
        let mut l = Layer {
            seed: self.seed,
            output_dir: self.output_dir.clone(),
            sample: self.sample,
            ..Layer::default()
        };
        l.model.blades = self.blades;
        l.model.reduced_features = self.reduced_features;
        l.train.mse_epochs = self.mse_epochs;
        l.train.zval_epochs = self.zval_epochs;
        l.train.batch_size = self.batch_size;
        l.train.learning_rate = self.lr;
        l.synthesis.rr_p = self.rr_p;
        l.synthesis.fix_structural_zeros = self.fix_structural_zeros.then_some(true);
        l.synthesis.instances = self.instances;
        l.synthesis.threshold_quantile = self.threshold_quantile;
        l.synthesis.cell_weight = self.cell_weight.map(|w| match w {
            WeightArg::Abs => CellWeight::Abs,
            WeightArg::Signed => CellWeight::Signed,
            WeightArg::Excess => CellWeight::Excess,
        });
        l.metrics.pseudocount = self.pseudocount;
        l.metrics.d0 = self.d0;
        l.metrics.z0 = self.z0;
        l
    }
}

impl Command {
    fn paths(&self, l: &mut Layer) {
        let p = &mut l.paths;
        match self {
            Command::Schema { table, directives } => {
                p.table = table.clone();
                p.directives = directives.clone();
            }
            Command::Encode { table, schema } => {
                p.table = table.clone();
                p.schema = schema.clone();
            }
            Command::Train { data } | Command::Bootstrap { data } => p.data = data.clone(),
            Command::Synthesize { data, model } => {
                p.data = data.clone();
                p.model = model.clone();
            }
            Command::Evaluate { data, synth } => {
                p.data = data.clone();
                p.synth = synth.clone();
            }
            Command::Privacy { data, synth, sidecar } => {
                p.data = data.clone();
                p.synth = synth.clone();
                p.sidecar = sidecar.clone();
            }
            Command::Testbed { spec } => p.spec = spec.clone(),
        }
    }
}

/// Parses `args`, runs the command and maps the outcome to an exit status.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(written) => {
            for p in written {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("modp: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let file = match &cli.global.config {
        Some(p) => Layer::load(p)?,
        None => Layer::default(),
    };
    let mut flags = cli.global.layer();
    cli.command.paths(&mut flags);
    let env = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    RunConfig::resolve(&flags, env, &file)
}

/// Runs one command and returns the artifacts it wrote.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let cfg = resolve(cli)?;
    fs::create_dir_all(&cfg.output_dir).map_err(modp_core::Error::from)?;
    match &cli.command {
        Command::Schema { .. } => cmd_schema(&cfg),
        Command::Encode { .. } => cmd_encode(&cfg),
        Command::Train { .. } => cmd_train(&cfg),
        Command::Synthesize { .. } => cmd_synthesize(&cfg),
        Command::Evaluate { .. } => cmd_evaluate(&cfg),
        Command::Privacy { .. } => cmd_privacy(&cfg),
        Command::Bootstrap { .. } => cmd_bootstrap(&cfg),
        Command::Testbed { .. } => cmd_testbed(&cfg),
    }
}

fn write_text(path: &Path, seed: u64, command: &str, body: &str) -> Result<()> {
    let text = format!("# modp {command} seed={seed}\n{body}");
    fs::write(path, text).map_err(modp_core::Error::from)?;
    Ok(())
}

fn load_matrix(path: &Path) -> Result<ResponseMatrix> {
    Ok(ResponseMatrix::load(path)?.0)
}

pub fn cmd_schema(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let table = RawTable::load(cfg.input(&cfg.paths.table, "raw table")?)?;
    let directives = match &cfg.paths.directives {
        Some(_) => Directives::load(cfg.input(&cfg.paths.directives, "directive file")?)?,
        None => Directives::default(),
    };
    let schema = infer_schema(&table, &directives)?;
    let out = cfg.output(SCHEMA_FILE);
    write_text(&out, cfg.seed, "schema", &schema.to_toml_string()?)?;
    Ok(vec![out])
}

pub fn cmd_encode(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let table = RawTable::load(cfg.input(&cfg.paths.table, "raw table")?)?;
    let schema = CategoricalSchema::load(cfg.input(&cfg.paths.schema, "schema")?)?;
    let m = schema.encode_table(&table)?;
    let out = cfg.output(MATRIX_FILE);
    m.save(&out, cfg.seed)?;
    Ok(vec![out])
}

/// Prints one line per finished epoch with its mean loss.
struct EpochLog {
    epoch: Option<(usize, &'static str)>,
    sum: f64,
    count: usize,
}

impl EpochLog {
    fn record(&mut self, r: &LossRecord) {
        if self.epoch.map(|e| e.0) != Some(r.epoch) {
            self.flush();
            self.epoch = Some((r.epoch, r.kind.as_str()));
        }
        self.sum += r.loss;
        self.count += 1;
    }

    fn flush(&mut self) {
        if let Some((e, kind)) = self.epoch.take() {
            eprintln!("epoch {e:>4} {kind:<4} loss {:.6}", self.sum / self.count as f64);
        }
        self.sum = 0.0;
        self.count = 0;
    }
}

pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = load_matrix(&cfg.input(&cfg.paths.data, "matrix")?)?;
    let mut model = MultiBladeModel::new(data.layout().clone(), cfg.blades, cfg.reduced_features, cfg.seed)?;
    let mut log = EpochLog {
        epoch: None,
        sum: 0.0,
        count: 0,
    };
    let history = train(&mut model, &data, &cfg.train, &mut |r| log.record(r))?;
    log.flush();
    let ckpt = cfg.output(MODEL_FILE);
    model.save(&ckpt, cfg.seed)?;
    let hist = cfg.output(HISTORY_FILE);
    write_text(&hist, cfg.seed, "train", &history.to_delimited())?;
    Ok(vec![ckpt, hist])
}

pub fn cmd_synthesize(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = load_matrix(&cfg.input(&cfg.paths.data, "matrix")?)?;
    let (model, _) = MultiBladeModel::load(cfg.input(&cfg.paths.model, "checkpoint")?)?;
    let result = synthesize(&model, &data, &cfg.synthesis)?;
    let out = cfg.output(SYNTH_FILE);
    result.rows.save(&out, cfg.seed)?;
    let side = cfg.output(SIDECAR_FILE);
    write_text(&side, cfg.seed, "synthesize", &result.sidecar())?;
    Ok(vec![out, side])
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = load_matrix(&cfg.input(&cfg.paths.data, "true matrix")?)?;
    let synth = load_matrix(&cfg.input(&cfg.paths.synth, "synthetic matrix")?)?;
    let report = evaluate(&crosstab(&data), &crosstab(&synth), cfg.metrics)?;
    let out = cfg.output(METRICS_FILE);
    write_text(&out, cfg.seed, "evaluate", &report.to_delimited())?;
    let mut written = vec![out];
    written.extend(report.export_plot_data(cfg.output(METRICS_PLOTS))?);
    Ok(written)
}

pub fn cmd_privacy(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = load_matrix(&cfg.input(&cfg.paths.data, "true matrix")?)?;
    let synth_path = cfg.input(&cfg.paths.synth, "synthetic matrix")?;
    let sidecar = cfg.paths.sidecar.clone().or_else(|| Some(synth_path.with_extension("sidecar.csv")));
    let sidecar = fs::read_to_string(cfg.input(&sidecar, "sidecar")?).map_err(modp_core::Error::from)?;
    let synth = SynthesisResult::from_sidecar(load_matrix(&synth_path)?, &sidecar)?;
    let report = privacy_report(&data, &synth, cfg.sample, cfg.seed)?;
    let out = cfg.output(PRIVACY_FILE);
    write_text(&out, cfg.seed, "privacy", &report.to_delimited())?;
    let mut written = vec![out];
    written.extend(report.export_plot_data(cfg.output(PRIVACY_PLOTS))?);
    Ok(written)
}

pub fn cmd_bootstrap(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = load_matrix(&cfg.input(&cfg.paths.data, "matrix")?)?;
    let resample = bootstrap_resample(&data, cfg.seed)?;
    let report = evaluate(&crosstab(&data), &crosstab(&resample), cfg.metrics)?;
    let out = cfg.output(BOOTSTRAP_FILE);
    write_text(&out, cfg.seed, "bootstrap", &report.to_delimited())?;
    Ok(vec![out])
}

pub fn cmd_testbed(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let spec = PopulationSpec::load(cfg.input(&cfg.paths.spec, "population spec")?)?;
    let tb = generate(&spec, cfg.seed)?;
    let table = cfg.output(TESTBED_TABLE);
    fs::write(&table, tb.table().to_csv_string()?).map_err(modp_core::Error::from)?;
    let schema = cfg.output(TESTBED_SCHEMA);
    write_text(&schema, cfg.seed, "testbed", &tb.schema.to_toml_string()?)?;
    let truth = cfg.output(TESTBED_TRUTH);
    let mut body = String::new();
    let _ = writeln!(body, "# rows={} subpopulations={}", tb.n_rows(), spec.subpopulations.len());
    body.push_str(&tb.ground_truth());
    write_text(&truth, cfg.seed, "testbed", &body)?;
    let labels = cfg.output(TESTBED_LABELS);
    write_text(&labels, cfg.seed, "testbed", &tb.labels_to_delimited())?;
    Ok(vec![table, schema, truth, labels])
}
