//! The `dogid` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error. Configuration
//! comes from flags only.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::archsearch::{run_search, Optimizer, SearchConfig, DEFAULT_INNER_FOLDS};
use crate::classical::DEFAULT_EIGEN_COMPONENTS;
use crate::container::{dataset_fingerprint, parse_grid, SavedModel};
use crate::deepfeat::{read_feature_file, FeatureNormalization};
use crate::error::{Error, Result};
use crate::evalkit::{parse_groups, ranked_classes, run_protocol, EvaluationReport, DEFAULT_FOLDS};
use crate::imaging::{
    align_by_eyes, load_dataset, native_size, read_image, resize_bilinear, write_dataset, write_png,
    GalleryDataset,
};
use crate::randconv::ArchitectureSpec;
use crate::recognizer::{feature_table, BarkArchitecture, Method, MethodConfig, MethodRecognizer, TrainedModel};
use crate::sparse::{SparseConfig, DEFAULT_M_FRACTION};
use crate::svm::pseudo_probabilities;
use crate::synth::{synthetic_gallery, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "dogid", version, about = "Individual dog face identification toolkit")]
pub struct Cli {
    /// Log verbosity (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    /// Only log errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cross-validate a method and write report files.
    Evaluate(EvaluateArgs),
    /// Train on a whole dataset and save the model.
    Train(TrainArgs),
    /// Rank the individuals of a saved model for one probe.
    Query(QueryArgs),
    /// Search convnet architectures on a dataset treated as training data.
    SearchArch(SearchArgs),
    /// Write a synthetic gallery in the dataset layout.
    Synth(SynthArgs),
    /// Rotate a face so the eyes are level, then resize.
    Align(AlignArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Eigen,
    Fisher,
    Lbph,
    Sparse,
    Bark,
    Woof,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Eigen => Method::Eigen,
            MethodArg::Fisher => Method::Fisher,
            MethodArg::Lbph => Method::Lbph,
            MethodArg::Sparse => Method::Sparse,
            MethodArg::Bark => Method::Bark,
            MethodArg::Woof => Method::Woof,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Random,
    Tpe,
}

impl From<OptimizerArg> for Optimizer {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Random => Optimizer::Random,
            OptimizerArg::Tpe => Optimizer::Tpe,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormalizationArg {
    None,
    L2,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Dataset root: one subdirectory of images per individual.
    #[arg(long)]
    pub dataset: PathBuf,

    /// Resize every image to WxH (default: size of the first image).
    #[arg(long, value_parser = parse_size)]
    pub size: Option<(usize, usize)>,
}

#[derive(Debug, Args)]
pub struct MethodArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,

    /// Master seed; all randomness derives from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Eigenfaces components.
    #[arg(long, default_value_t = DEFAULT_EIGEN_COMPONENTS)]
    pub components: usize,

    /// LBPH grid, WxH cells.
    #[arg(long, default_value = "8x8", value_parser = parse_grid_arg)]
    pub grid: (usize, usize),

    /// Fraction of the gallery kept by the sparse method's first phase.
    #[arg(long, default_value_t = DEFAULT_M_FRACTION)]
    pub m_fraction: f64,

    /// SVM penalty (default 1e5 for bark, 1.0 for woof).
    #[arg(long)]
    pub svm_c: Option<f64>,

    /// DOGFEAT feature file (woof).
    #[arg(long)]
    pub features: Option<PathBuf>,

    /// Scale deep features before the SVM (woof).
    #[arg(long, value_enum, default_value = "none")]
    pub feature_norm: NormalizationArg,

    /// Architecture spec file (bark).
    #[arg(long, conflicts_with = "search_budget")]
    pub spec: Option<PathBuf>,

    /// Search this many architectures on each training split (bark).
    #[arg(long)]
    pub search_budget: Option<usize>,

    #[arg(long, value_enum, default_value = "tpe")]
    pub optimizer: OptimizerArg,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DatasetArgs,

    #[command(flatten)]
    pub method: MethodArgs,

    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    pub folds: usize,

    /// Chance level for odds ratios is k / this (default: class count).
    #[arg(long)]
    pub chance_classes: Option<usize>,

    /// `label<TAB>group` file for per-group accuracy.
    #[arg(long)]
    pub groups: Option<PathBuf>,

    /// Output directory for the report files.
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DatasetArgs,

    #[command(flatten)]
    pub method: MethodArgs,

    /// Model file to write.
    #[arg(long, default_value = "model.paws")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub model: PathBuf,

    /// Probe image.
    #[arg(long, required_unless_present = "features")]
    pub probe: Option<PathBuf>,

    /// DOGFEAT file holding the probe's deep feature (woof models).
    #[arg(long)]
    pub features: Option<PathBuf>,

    /// Record to use from --features, as label/image_id (default: the only record).
    #[arg(long)]
    pub probe_key: Option<String>,

    #[arg(long, default_value_t = 5)]
    pub top_k: usize,

    /// Resize the probe to the model's input size instead of rejecting it.
    #[arg(long)]
    pub resize: bool,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub data: DatasetArgs,

    #[arg(long, default_value_t = crate::archsearch::DEFAULT_SEARCH_BUDGET)]
    pub search_budget: usize,

    #[arg(long, value_enum, default_value = "tpe")]
    pub optimizer: OptimizerArg,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value_t = DEFAULT_INNER_FOLDS)]
    pub inner_folds: usize,

    /// SVM penalty for scoring candidates.
    #[arg(long, default_value_t = crate::svm::BARK_SVM_C)]
    pub svm_c: f64,

    /// Output directory for `history.log` and `best.spec`.
    #[arg(long, default_value = "search")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long, default_value_t = 10)]
    pub individuals: usize,

    #[arg(long, default_value_t = 8)]
    pub samples: usize,

    #[arg(long, default_value_t = 64)]
    pub size: usize,

    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,

    #[arg(long, default_value_t = 2)]
    pub max_shift: i32,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub image: PathBuf,

    /// Left eye as x,y pixels.
    #[arg(long, value_parser = parse_point)]
    pub left_eye: (f64, f64),

    /// Right eye as x,y pixels.
    #[arg(long, value_parser = parse_point)]
    pub right_eye: (f64, f64),

    #[arg(long, value_parser = parse_size)]
    pub size: Option<(usize, usize)>,

    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    parse_grid(s).map_err(|_| format!("expected WxH, got {s:?}"))
}

fn parse_grid_arg(s: &str) -> std::result::Result<(usize, usize), String> {
    parse_grid(s).map_err(|e| e.to_string())
}

fn parse_point(s: &str) -> std::result::Result<(f64, f64), String> {
    let bad = || format!("expected x,y, got {s:?}");
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logging(cli.verbose, cli.quiet);
    let outcome = match cli.jobs {
        Some(0) => usage("--jobs must be at least 1"),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(CliError::Runtime(Error::config(e.to_string()))),
        },
        None => dispatch(cli.command),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("dogid: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = if quiet {
        log::LevelFilter::Error
    } else {
        match verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    };
    // Built without reading the environment.
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Train(a) => cmd_train(a),
        Command::Query(a) => cmd_query(a),
        Command::SearchArch(a) => cmd_search_arch(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Align(a) => cmd_align(a),
    }
}

fn load(data: &DatasetArgs) -> CliResult<GalleryDataset> {
    let size = match data.size {
        Some(s) => s,
        None => native_size(&data.dataset)?,
    };
    let (ds, report) = load_dataset(&data.dataset, size)?;
    for (path, why) in &report.skipped {
        log::warn!("skipped {}: {why}", path.display());
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }
    log::info!(
        "loaded {} images of {} individuals from {}",
        ds.len(),
        ds.class_count(),
        data.dataset.display()
    );
    Ok(ds)
}

fn method_config(args: &MethodArgs) -> CliResult<MethodConfig> {
    let method: Method = args.method.into();
    let mut cfg = MethodConfig::new(method);
    cfg.components = args.components;
    cfg.grid = args.grid;
    cfg.sparse = SparseConfig {
        m_fraction: args.m_fraction,
        ..SparseConfig::default()
    };
    cfg.svm_c = args.svm_c;
    cfg.svm_seed = args.seed;
    cfg.normalization = match args.feature_norm {
        NormalizationArg::None => FeatureNormalization::None,
        NormalizationArg::L2 => FeatureNormalization::L2,
    };
    if args.components == 0 {
        return usage("--components must be at least 1");
    }
    if !(args.m_fraction > 0.0 && args.m_fraction <= 1.0) {
        return usage("--m-fraction must lie in (0, 1]");
    }
    if let Some(c) = args.svm_c {
        if !(c > 0.0 && c.is_finite()) {
            return usage("--svm-c must be positive");
        }
    }
    match method {
        Method::Woof => {
            let Some(path) = &args.features else {
                return usage("--method woof needs --features <DOGFEAT file> with the deep features of every image");
            };
            cfg.woof_features = Some(Arc::new(feature_table(&read_feature_file(path)?)));
        }
        Method::Bark => {
            cfg.bark = Some(match (&args.spec, args.search_budget) {
                (Some(path), _) => BarkArchitecture::Fixed(read_spec(path)?),
                (None, Some(0)) => return usage("--search-budget must be at least 1"),
                (None, Some(budget)) => BarkArchitecture::Search(SearchConfig {
                    budget,
                    optimizer: args.optimizer.into(),
                    master_seed: args.seed,
                    ..SearchConfig::default()
                }),
                (None, None) => {
                    return usage("--method bark needs --spec <file> or --search-budget <n>")
                }
            });
        }
        _ => {}
    }
    Ok(cfg)
}

fn read_spec(path: &Path) -> Result<ArchitectureSpec> {
    let text = std::fs::read_to_string(path)?;
    text.parse().map_err(|e| match e {
        Error::Parse {
            line,
            column,
            message,
            ..
        } => Error::Parse {
            path: path.display().to_string(),
            line,
            column,
            message,
        },
        other => other,
    })
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult<()> {
    if a.folds < 2 {
        return usage("--folds must be at least 2");
    }
    if a.chance_classes == Some(0) {
        return usage("--chance-classes must be at least 1");
    }
    let cfg = method_config(&a.method)?;
    let groups = match &a.groups {
        Some(p) => Some(parse_groups(&std::fs::read_to_string(p).map_err(Error::from)?, &p.display().to_string())?),
        None => None,
    };
    let ds = load(&a.data)?;
    let recognizer = MethodRecognizer::new(cfg)?;
    let mut report: EvaluationReport = run_protocol(&ds, &recognizer, a.folds, a.method.seed)?;
    if let Some(c) = a.chance_classes {
        report.chance_classes = c;
    }
    std::fs::create_dir_all(&a.out).map_err(Error::from)?;
    let text = report.to_text(groups.as_ref());
    write_file(&a.out, "report.txt", &text)?;
    write_file(&a.out, "metrics.tsv", &report.to_tsv(groups.as_ref()))?;
    write_file(&a.out, "confusion.csv", &report.confusion_csv())?;
    write_file(&a.out, "recall_curve.tsv", &report.recall_curve())?;
    write_file(&a.out, "predictions.tsv", &report.predictions_tsv())?;
    print!("{text}");
    println!("reports written to {}", a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let cfg = method_config(&a.method)?;
    let ds = load(&a.data)?;
    let mut meta = BTreeMap::new();
    meta.insert("seed".to_string(), a.method.seed.to_string());
    meta.insert("dataset".to_string(), ds.name.clone());
    meta.insert("dataset_fingerprint".to_string(), dataset_fingerprint(&ds));
    meta.insert("samples".to_string(), ds.len().to_string());
    meta.insert("svm_c".to_string(), cfg.svm_config().c.to_string());
    let recognizer = MethodRecognizer::new(cfg)?;
    let model = crate::evalkit::Recognizer::train(&recognizer, &ds)?;
    let saved = SavedModel {
        model,
        labels: ds.individuals().to_vec(),
        metadata: meta,
    };
    saved.save(&a.out)?;
    println!(
        "trained {} on {} images of {} individuals; model written to {}",
        recognizer.config.method,
        ds.len(),
        ds.class_count(),
        a.out.display()
    );
    Ok(())
}

fn cmd_query(a: QueryArgs) -> CliResult<()> {
    if a.top_k == 0 {
        return usage("--top-k must be at least 1");
    }
    let saved = SavedModel::load(&a.model)?;
    let scores = match (&saved.model, &a.probe, &a.features) {
        (TrainedModel::Woof(m), _, Some(path)) => {
            let ff = read_feature_file(path)?;
            let record = match &a.probe_key {
                Some(key) => ff
                    .records
                    .iter()
                    .find(|r| r.key().to_string() == *key)
                    .ok_or_else(|| Error::config(format!("{} has no record {key}", path.display())))?,
                None if ff.records.len() == 1 => &ff.records[0],
                None => return usage("--features holds several records; pick one with --probe-key label/id"),
            };
            m.score_feature(&record.values)?
        }
        (TrainedModel::Woof(_), _, None) => {
            return usage("WOOF models need --features with the probe's deep feature")
        }
        (model, Some(probe), _) => {
            let mut img = read_image(probe)?;
            let dims = model.input_dims().expect("image models have an input size");
            if img.dims() != dims {
                if !a.resize {
                    return Err(Error::invalid(format!(
                        "probe is {}x{} but the model expects {}x{}; pass --resize to resample it",
                        img.width(),
                        img.height(),
                        dims.0,
                        dims.1
                    ))
                    .into());
                }
                img = resize_bilinear(&img, dims.0, dims.1)?;
            }
            model.score_image(&img)?
        }
        (_, None, _) => return usage("--probe is required for image models"),
    };
    let c = scores.len();
    let k = if a.top_k > c {
        log::warn!("--top-k {} exceeds the {c} individuals in the model; showing {c}", a.top_k);
        c
    } else {
        a.top_k
    };
    let probs = pseudo_probabilities(&scores);
    println!("{:>4}  {:<24} {:>14}  {:>8}", "rank", "individual", "score", "p*");
    for (rank, class) in ranked_classes(&scores).into_iter().take(k).enumerate() {
        println!(
            "{:>4}  {:<24} {:>14.6}  {:>8.4}",
            rank + 1,
            saved.labels[class],
            scores[class] + 0.0,
            probs[class]
        );
    }
    println!("p* = softmax of the scores, for display only");
    Ok(())
}

fn cmd_search_arch(a: SearchArgs) -> CliResult<()> {
    if a.search_budget == 0 {
        return usage("--search-budget must be at least 1");
    }
    if a.inner_folds < 2 {
        return usage("--inner-folds must be at least 2");
    }
    let ds = load(&a.data)?;
    let config = SearchConfig {
        budget: a.search_budget,
        optimizer: a.optimizer.into(),
        master_seed: a.seed,
        inner_folds: a.inner_folds,
        svm_c: a.svm_c,
        ..SearchConfig::default()
    };
    let outcome = run_search(&ds, &config)?;
    std::fs::create_dir_all(&a.out).map_err(Error::from)?;
    write_file(&a.out, "history.log", &outcome.history_log())?;
    let best = format!(
        "# objective={} trial={} optimizer={} seed={}\n{}",
        outcome.best.objective.unwrap_or(f64::NAN),
        outcome.best.index,
        config.optimizer,
        config.master_seed,
        outcome.best.spec.to_text()
    );
    write_file(&a.out, "best.spec", &best)?;
    println!(
        "best of {} trials: objective {:.4} (trial {})\n{}",
        outcome.history.len(),
        outcome.best.objective.unwrap_or(f64::NAN),
        outcome.best.index,
        outcome.best.spec
    );
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    let cfg = SynthConfig {
        individuals: a.individuals,
        samples_per_individual: a.samples,
        size: a.size,
        noise_sigma: a.noise,
        max_shift: a.max_shift,
        seed: a.seed,
    };
    let ds = synthetic_gallery(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    write_dataset(&ds, &a.out)?;
    println!(
        "wrote {} images of {} individuals to {}",
        ds.len(),
        ds.class_count(),
        a.out.display()
    );
    Ok(())
}

fn cmd_align(a: AlignArgs) -> CliResult<()> {
    let img = read_image(&a.image)?;
    let mut aligned = align_by_eyes(&img, a.left_eye, a.right_eye)?;
    if let Some((w, h)) = a.size {
        aligned = resize_bilinear(&aligned, w, h)?;
    }
    write_png(&aligned, &a.out)?;
    println!("aligned face written to {}", a.out.display());
    Ok(())
}
