use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tuskmarks::analysis::{self, SignatureCategory};
use tuskmarks::catalog::Catalog;
use tuskmarks::config::{ConfigError, PipelineConfig, ENV_PREFIX};
use tuskmarks::fixture;
use tuskmarks::metrics::{corpus_cer, krippendorff_alpha, sample_precision, RatingMatrix};
use tuskmarks::pipeline::{self, FailureClass, PipelineError};
use tuskmarks::formats;

mod remote;

#[derive(Parser)]
#[command(name = "tuskmarks", version, about = "Extract, label and link handwritten markings on seized tusks")]
struct Cli {
    /// Configuration file (default: $TUSKMARKS_CONFIG, else ./tuskmarks.toml if present)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set propagation.assign_threshold=0.95`
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Random seed for sampling and model fitting
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Review service to talk to; an embedded one is started when omitted
    #[arg(long, global = true)]
    server: Option<String>,
    /// Print machine-readable JSON instead of text
    #[arg(long, global = true)]
    json: bool,
    #[arg(long, global = true, default_value = "info")]
    log_level: tracing::Level,
    /// Emit log records as JSON lines
    #[arg(long, global = true)]
    log_json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a configuration file holding every default
    Init {
        #[arg(default_value = "tuskmarks.toml")]
        path: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Print the resolved configuration
    Config,
    /// Load the photograph manifest and raw detections into the catalog
    Ingest,
    /// Deduplicate, clip and merge detections into markings
    Postprocess,
    /// Score detections against ground-truth boxes
    Evaluate {
        #[arg(long)]
        ground_truth: PathBuf,
        /// Boxes to score; the catalog's extracted markings by default
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Draw the per-seizure review sample and open labeling tasks
    Sample,
    /// Train per-label classifiers on reviewed markings and label the rest
    Propagate,
    /// Query the vision-language backend for each marking
    Annotate {
        /// Re-annotate markings that are already settled
        #[arg(long)]
        force: bool,
    },
    /// Resolve disagreeing labels and stages across sources
    Reconcile,
    /// Build the signature index and link reports, or print one view of it
    Analyze {
        #[command(subcommand)]
        view: Option<AnalyzeView>,
    },
    /// Find markings whose description, text or symbol holds every query word
    Search {
        #[arg(long, short)]
        query: String,
        #[arg(long, default_value_t = 20)]
        limit: usize,
    },
    /// Transcription error rate, rater agreement and sample precision
    #[command(subcommand)]
    Metrics(MetricsCmd),
    /// Inspect and work review queues through the service API
    #[command(subcommand)]
    Review(ReviewCmd),
    /// Run the review service
    Serve {
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Run every stage that can run, stopping for human review when needed
    Pipeline,
    /// Write synthetic inputs and catalogs
    #[command(subcommand)]
    Fixture(FixtureCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum Category {
    InitialPair,
    LongerText,
    Symbol,
}

impl From<Category> for SignatureCategory {
    fn from(c: Category) -> Self {
        match c {
            Category::InitialPair => SignatureCategory::InitialPair,
            Category::LongerText => SignatureCategory::LongerText,
            Category::Symbol => SignatureCategory::Symbol,
        }
    }
}

#[derive(Subcommand)]
enum AnalyzeView {
    /// Recurring signatures with their per-seizure counts
    Signatures {
        /// Only signatures seen in at least this many seizures
        #[arg(long, default_value_t = 1)]
        min_seizures: usize,
    },
    Links,
    Occurrences,
    Freq {
        #[arg(long, value_enum, default_value = "initial-pair")]
        category: Category,
        #[arg(long)]
        threshold: Option<usize>,
        #[arg(long)]
        top: Option<usize>,
    },
    Xo,
}

#[derive(Subcommand)]
enum MetricsCmd {
    /// Character error rate over `reference<TAB>hypothesis` lines
    Cer {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        case_sensitive: bool,
    },
    /// Krippendorff's alpha over `item<TAB>rater<TAB>category` lines
    Alpha {
        #[arg(long)]
        ratings: PathBuf,
    },
    /// Per-label precision over `item<TAB>assigned<TAB>truth` lines
    Precision {
        #[arg(long)]
        sample: PathBuf,
    },
}

#[derive(Subcommand)]
enum ReviewCmd {
    /// Open task counts per queue
    Status,
    Queue {
        name: String,
        #[arg(long)]
        seizure: Option<u32>,
        #[arg(long)]
        limit: Option<usize>,
    },
    Label {
        task_id: String,
        label: String,
        #[arg(long)]
        text: Option<String>,
        #[command(flatten)]
        who: Reviewer,
    },
    Skip {
        task_id: String,
        #[command(flatten)]
        who: Reviewer,
    },
    /// Apply `queue<TAB>marking_id<TAB>label[<TAB>text]` decisions to open tasks
    Import {
        #[arg(long)]
        decisions: PathBuf,
        #[command(flatten)]
        who: Reviewer,
    },
}

#[derive(Args)]
struct Reviewer {
    #[arg(long, default_value = "cli")]
    reviewer: String,
}

#[derive(Subcommand)]
enum FixtureCmd {
    /// Write a synthetic corpus and its configuration
    Corpus {
        dir: PathBuf,
        #[arg(long, default_value_t = 90)]
        images_per_seizure: usize,
    },
    /// Save the cross-seizure occurrence catalog
    Occurrence { dir: PathBuf },
    /// Save the initial-pair frequency catalog
    Frequency { dir: PathBuf },
    /// Write ground-truth and prediction boxes for detector evaluation
    Detection { dir: PathBuf },
}

struct CliError {
    class: FailureClass,
    message: String,
}

impl CliError {
    fn new(class: FailureClass, message: impl Into<String>) -> Self {
        Self {
            class,
            message: message.into(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self.class {
            FailureClass::Config => 2,
            FailureClass::Data => 3,
            FailureClass::Runtime => 4,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        Self::new(e.class(), e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        PipelineError::from(e).into()
    }
}

impl From<tuskmarks::catalog::CatalogError> for CliError {
    fn from(e: tuskmarks::catalog::CatalogError) -> Self {
        PipelineError::from(e).into()
    }
}

impl From<tuskmarks_client::ClientError> for CliError {
    fn from(e: tuskmarks_client::ClientError) -> Self {
        let class = match e.code() {
            Some("unknown_task" | "task_closed" | "invalid_label" | "missing_text" | "missing_reviewer" | "unknown_queue") => {
                FailureClass::Data
            }
            _ => FailureClass::Runtime,
        };
        Self::new(class, e.to_string())
    }
}

fn data_err(path: &Path, message: impl std::fmt::Display) -> CliError {
    CliError::new(FailureClass::Data, format!("{}: {message}", path.display()))
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| data_err(path, e))
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(FailureClass::Runtime, format!("{}: {e}", path.display()))
}

type Result<T, E = CliError> = std::result::Result<T, E>;

/// Environment overrides, then `--seed` and `--set` on top.
fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os("TUSKMARKS_CONFIG").map(PathBuf::from))
        .or_else(|| Path::new("tuskmarks.toml").exists().then(|| PathBuf::from("tuskmarks.toml")));
    let (text, base) = match &path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.clone(), source })?;
            let base = p.parent().filter(|b| !b.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf);
            (text, base)
        }
        None => (String::new(), PathBuf::from(".")),
    };
    let mut env: BTreeMap<String, String> = std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    if let Some(seed) = cli.seed {
        env.insert(format!("{ENV_PREFIX}SEED"), seed.to_string());
    }
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| ConfigError::Invalid(format!("--set expects KEY=VALUE, got {o:?}")))?;
        let key = k.trim().split('.').map(str::to_uppercase).collect::<Vec<_>>().join("__");
        env.insert(format!("{ENV_PREFIX}{key}"), v.trim().to_string());
    }
    Ok(PipelineConfig::from_toml_with_env(&text, &base, env)?)
}

fn open_catalog(cfg: &PipelineConfig) -> Result<Catalog> {
    Ok(Catalog::open(cfg.resolve(&cfg.paths.catalog))?)
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("report serializes"));
}

fn emit<T: Serialize>(json: bool, v: &T, text: impl FnOnce() -> String) {
    if json {
        print_json(v);
    } else {
        print!("{}", text());
    }
}

fn init_logging(cli: &Cli) {
    let builder = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(cli.log_level)
        .with_target(false)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()));
    if cli.log_json {
        builder.json().init();
    } else {
        builder.init();
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli);
    match run(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.exit_code())
        }
    }
}

/// Runs a catalog-mutating stage and saves the catalog afterwards.
fn stage<T: Serialize>(cfg: &PipelineConfig, f: impl FnOnce(&PipelineConfig, &mut Catalog) -> Result<T, PipelineError>) -> Result<()> {
    let mut c = open_catalog(cfg)?;
    let report = f(cfg, &mut c)?;
    c.save()?;
    print_json(&report);
    Ok(())
}

async fn run(cli: Cli) -> Result<()> {
    let json = cli.json;
    match &cli.command {
        Command::Init { path, force } => {
            if path.exists() && !force {
                return Err(CliError::new(
                    FailureClass::Config,
                    format!("{} exists; pass --force to overwrite", path.display()),
                ));
            }
            let cfg = PipelineConfig {
                seed: cli.seed,
                ..Default::default()
            };
            std::fs::write(path, cfg.to_toml()).map_err(|e| io_err(path, e))?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Fixture(cmd) => run_fixture(&cli, cmd, json),
        command => {
            let cfg = load_config(&cli)?;
            run_with_config(&cli, &cfg, command, json).await
        }
    }
}

async fn run_with_config(cli: &Cli, cfg: &PipelineConfig, command: &Command, json: bool) -> Result<()> {
    match command {
        Command::Config => print!("{}", cfg.to_toml()),
        Command::Ingest => stage(cfg, pipeline::ingest)?,
        Command::Postprocess => stage(cfg, pipeline::postprocess)?,
        Command::Sample => stage(cfg, pipeline::sample)?,
        Command::Propagate => stage(cfg, pipeline::propagate)?,
        Command::Reconcile => stage(cfg, pipeline::reconcile)?,
        Command::Evaluate {
            ground_truth,
            predictions,
        } => {
            let c = open_catalog(cfg)?;
            let r = pipeline::evaluate(cfg, &c, ground_truth, predictions.as_deref())?;
            emit(json, &r, || {
                let t = &r.total;
                let rate = |v: Option<f64>| v.map_or("undefined".into(), |x| format!("{x:.4}"));
                format!(
                    "threshold {}: {} images, TP {} FN {} FP {}, precision {}, recall {}\n",
                    r.threshold,
                    r.images,
                    t.true_positives,
                    t.false_negatives,
                    t.false_positives,
                    rate(t.precision),
                    rate(t.recall)
                )
            });
        }
        Command::Annotate { force } => {
            let mut c = open_catalog(cfg)?;
            let backend = pipeline::build_backend(cfg)?;
            let summary = pipeline::annotate(cfg, &mut c, backend.as_ref(), *force).await;
            c.save()?;
            print_json(&summary?);
        }
        Command::Analyze { view } => run_analyze(cfg, view.as_ref(), json)?,
        Command::Search { query, limit } => {
            let c = open_catalog(cfg)?;
            let hits = analysis::search_descriptions(&c, query);
            emit(json, &hits, || {
                let mut s = format!("{} hits for {query:?}\n", hits.len());
                for h in hits.iter().take(*limit) {
                    let m = c.marking(&h.marking_id).expect("hit refers to a marking");
                    let what = m.text.as_deref().or(m.symbol_name.as_deref()).unwrap_or("-");
                    let _ = writeln!(
                        s,
                        "{}\tseizure {}\t{what}\t{}\t{}",
                        h.marking_id,
                        m.seizure,
                        h.matches,
                        m.description.as_deref().unwrap_or("")
                    );
                }
                s
            });
        }
        Command::Metrics(m) => run_metrics(cfg, m, json)?,
        Command::Review(r) => remote::run_review(cli, cfg, r, json).await?,
        Command::Serve { host, port, static_dir } => {
            let host = host.clone().unwrap_or_else(|| cfg.service.host.clone());
            let port = port.unwrap_or(cfg.service.port);
            let static_dir = static_dir.clone().or_else(|| cfg.service.static_dir.as_ref().map(|d| cfg.resolve(d)));
            remote::serve(cfg, &host, port, static_dir).await?;
        }
        Command::Pipeline => {
            let mut c = open_catalog(cfg)?;
            let outcome = pipeline::run(cfg, &mut c, None).await?;
            emit(json, &outcome, || outcome.render_text());
        }
        Command::Init { .. } | Command::Fixture(_) => unreachable!("handled before configuration"),
    }
    Ok(())
}

fn run_analyze(cfg: &PipelineConfig, view: Option<&AnalyzeView>, json: bool) -> Result<()> {
    let Some(view) = view else {
        return stage(cfg, pipeline::analyze);
    };
    let c = open_catalog(cfg)?;
    let a = analysis::analyze(&c, &cfg.analysis);
    match view {
        AnalyzeView::Signatures { min_seizures } => {
            let groups: Vec<_> = a
                .index
                .iter()
                .filter(|g| g.recurring && g.seizures().len() >= *min_seizures)
                .collect();
            emit(json, &groups, || {
                let mut s = String::new();
                for g in &groups {
                    let per: Vec<String> = g.occurrences.iter().map(|(k, n)| format!("{k}:{n}")).collect();
                    let _ = writeln!(s, "{}\t{}\t{}\t{}", g.key, g.category.as_str(), g.total(), per.join(" "));
                }
                s
            });
        }
        AnalyzeView::Links => emit(json, &a.report.links, || analysis::render_links_table(&a.report.links)),
        AnalyzeView::Occurrences => {
            let body = analysis::render_occurrence_table(&a.index, &c.seizures());
            emit(json, &a.index, || body);
        }
        AnalyzeView::Freq { category, threshold, top } => {
            let stats = analysis::frequency_stats(
                &a.index,
                (*category).into(),
                threshold.unwrap_or(cfg.analysis.frequency_threshold),
                top.unwrap_or(cfg.analysis.top_k),
            );
            emit(json, &stats, || stats.render_text());
        }
        AnalyzeView::Xo => emit(json, &a.xo, || {
            let s = &a.report.xo;
            let seizures = |v: &[tuskmarks::catalog::SeizureId]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
            let mut out = format!(
                "{} X/O markings on {} photographs ({} with O), {} partial\nseizures: {}\nlambda-terminated: {}\n",
                s.matches,
                s.images_with_x,
                s.images_with_xo_sequence,
                s.partial,
                seizures(&s.seizures),
                seizures(&s.lambda_seizures)
            );
            for m in &a.xo {
                let _ = writeln!(
                    out,
                    "{}\tseizure {}\t{}{}{}",
                    m.marking_id,
                    m.seizure,
                    m.sequence,
                    if m.flags.lambda_terminated { "\tlambda" } else { "" },
                    if m.flags.partial { "\tpartial" } else { "" }
                );
            }
            out
        }),
    }
    Ok(())
}

fn parsed<T>(path: &Path, p: formats::Parsed<T>) -> Result<Vec<T>> {
    match p.errors.first() {
        Some(e) => Err(data_err(path, e)),
        None => Ok(p.records),
    }
}

fn run_metrics(cfg: &PipelineConfig, m: &MetricsCmd, json: bool) -> Result<()> {
    match m {
        MetricsCmd::Cer { pairs, case_sensitive } => {
            let records = parsed(pairs, formats::parse_text_pairs(&read(pairs)?))?;
            let mut opts = cfg.metrics;
            if *case_sensitive {
                opts.case_insensitive = false;
            }
            let r = corpus_cer(&records, opts).map_err(|e| data_err(pairs, e))?;
            emit(json, &r, || {
                let opt = |v: Option<f64>| v.map_or("n/a".into(), |x| format!("{x:.4}"));
                format!(
                    "pairs: {}\nCER: {:.4} ({} edits / {} reference characters)\nsingle character: {}\nmulti character: {}\nmacro average: {:.4}\n",
                    r.pairs,
                    r.overall,
                    r.total_edits,
                    r.total_reference_chars,
                    opt(r.single_char),
                    opt(r.multi_char),
                    r.macro_average
                )
            });
        }
        MetricsCmd::Alpha { ratings } => {
            let triples = parsed(ratings, formats::parse_ratings(&read(ratings)?))?;
            let matrix = RatingMatrix::from_triples(triples).map_err(|e| data_err(ratings, e))?;
            let r = krippendorff_alpha(&matrix).map_err(|e| data_err(ratings, e))?;
            emit(json, &r, || match r.alpha {
                Some(a) => format!("alpha: {a:.4} over {} items ({} pairable values)\n", r.items_used, r.pairable_values),
                None => "alpha: undefined (every rating in one category)\n".to_string(),
            });
        }
        MetricsCmd::Precision { sample } => {
            let triples = parsed(sample, formats::parse_precision_sample(&read(sample)?))?;
            let r = sample_precision(&triples);
            emit(json, &r, || {
                let mut s = format!(
                    "sample: {}\noverall: {}\n",
                    r.sample_size,
                    r.overall.map_or("n/a".into(), |x| format!("{x:.4}"))
                );
                for (label, p) in &r.per_label {
                    let _ = writeln!(s, "{label}\t{}/{}\t{:.4}", p.correct, p.assigned, p.precision);
                }
                s
            });
        }
    }
    Ok(())
}

fn run_fixture(cli: &Cli, cmd: &FixtureCmd, json: bool) -> Result<()> {
    let mkdir = |d: &Path| std::fs::create_dir_all(d).map_err(|e| io_err(d, e));
    match cmd {
        FixtureCmd::Corpus { dir, images_per_seizure } => {
            mkdir(dir)?;
            let mut spec = fixture::CorpusSpec {
                images_per_seizure: *images_per_seizure,
                ..Default::default()
            };
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            let summary = fixture::write_corpus(dir, &spec).map_err(|e| io_err(dir, e))?;
            emit(json, &summary, || {
                format!(
                    "wrote {}: {} photographs, {} detections, {} markings\n",
                    dir.display(),
                    summary.images,
                    summary.detections,
                    summary.markings
                )
            });
        }
        FixtureCmd::Occurrence { dir } => {
            fixture::occurrence_catalog().save_to(dir)?;
            println!("wrote {}", dir.display());
        }
        FixtureCmd::Frequency { dir } => {
            fixture::frequency_catalog().save_to(dir)?;
            println!("wrote {}", dir.display());
        }
        FixtureCmd::Detection { dir } => {
            mkdir(dir)?;
            let (gt, pred) = fixture::detection_eval_fixture();
            let render = |m: &formats::BoxesByImage| {
                let mut s = String::from("image_id\tx_min\ty_min\tx_max\ty_max\n");
                for (id, boxes) in m {
                    let _ = writeln!(s, "{id}");
                    for b in boxes {
                        let _ = writeln!(s, "{id}\t{}\t{}\t{}\t{}", b.x_min, b.y_min, b.x_max, b.y_max);
                    }
                }
                s
            };
            for (name, m) in [("ground_truth.tsv", &gt), ("predictions.tsv", &pred)] {
                let p = dir.join(name);
                std::fs::write(&p, render(m)).map_err(|e| io_err(&p, e))?;
            }
            println!("wrote {}", dir.display());
        }
    }
    Ok(())
}
