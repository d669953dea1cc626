//! Operator command line.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error. Domain errors are
//! reported on stderr as `<ErrorCode>: <message>`, one line, optionally
//! followed by indented detail lines.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rag3d_core::corpus::{validate_corpus, ValidationMode};
use rag3d_core::embedding::DEFAULT_DIM;
use rag3d_core::prompt::PromptTemplate;
use rag3d_core::Mode;

use crate::config::{open_index, App, ServiceConfig};
use crate::corpus_io::{self, load_corpus, CorpusLoadError};
use crate::embedder::EmbedderConfig;
use crate::error::ErrorCode;
use crate::evaluation::{
    load_prompts, run_eval, AlignmentScorer, EvalConfig, EvalProgress, HttpScorer, REPORT_CSV,
};
use crate::executor::{HostExecutor, ScriptRunner};
use crate::gateway::Gateway;
use crate::retrieval::{IndexRetriever, NoRetriever, Retriever};
use crate::service::{serve, ServiceState};
use crate::session::{Pipeline, Session, SessionSettings};
use crate::store::{build_index, load_snapshot, save_snapshot, SharedIndex};

/// Separates the dumped prompt from the script in `generate --dump-prompt`.
pub const PROMPT_DELIMITER: &str = "# ---- end of prompt ----";

#[derive(Debug, Parser)]
#[command(
    name = "rag3d",
    version,
    about = "Retrieval-augmented 3D modeling script generation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate, summarize or create exemplar corpora.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Build or query the description index.
    #[command(subcommand)]
    Index(IndexCmd),
    /// Generate one script for a request.
    Generate(GenerateArgs),
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Batch evaluation.
    #[command(subcommand)]
    Eval(EvalCmd),
}

#[derive(Debug, Subcommand)]
pub enum CorpusCmd {
    /// Check a corpus directory; `--strict` also demands the full shape.
    Validate {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        strict: bool,
    },
    /// Write per-category code length statistics as CSV.
    Stats {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the bundled sample corpus.
    InitSample {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct EmbedderArgs {
    /// Service config whose `[embedder]` section to use.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Local embedder dimension when no config is given.
    #[arg(long, default_value_t = DEFAULT_DIM)]
    dim: usize,
}

#[derive(Debug, Subcommand)]
pub enum IndexCmd {
    Build {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        snapshot: PathBuf,
        #[command(flatten)]
        embedder: EmbedderArgs,
    },
    /// Prints `rank<TAB>entry_id<TAB>score` lines, best first.
    Search {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(short, default_value_t = 3)]
        k: usize,
        #[command(flatten)]
        embedder: EmbedderArgs,
    },
}

/// Component wiring shared by `generate` and `eval run`. Flags override the
/// config file.
#[derive(Debug, Args)]
pub struct ComponentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus directory.
    #[arg(long)]
    root: Option<PathBuf>,
    /// Index snapshot; the index is built in memory when omitted.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// Provider registry file.
    #[arg(long = "providers-file")]
    providers_file: Option<PathBuf>,
    #[arg(long)]
    host_binary: Option<PathBuf>,
    #[arg(long)]
    runner: Option<PathBuf>,
    /// Per-script execution timeout in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    #[arg(short, long)]
    k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    query: String,
    #[arg(long, default_value = "mock")]
    provider: String,
    /// No retrieval and no exemplars.
    #[arg(long)]
    base: bool,
    /// Run the script in the modeling host.
    #[arg(long)]
    execute: bool,
    /// Render to this PNG; implies `--execute`.
    #[arg(long)]
    render: Option<PathBuf>,
    /// Print the assembled prompt before the script.
    #[arg(long)]
    dump_prompt: bool,
    #[command(flatten)]
    components: ComponentArgs,
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    Run(EvalRunArgs),
}

#[derive(Debug, Args)]
pub struct EvalRunArgs {
    #[arg(long)]
    prompts: PathBuf,
    /// Comma-separated provider ids.
    #[arg(long, value_delimiter = ',', required = true)]
    providers: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![Mode::Base, Mode::Rag])]
    conditions: Vec<Mode>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Alignment scorer endpoint; overrides the config's `[scorer]`.
    #[arg(long)]
    scorer: Option<String>,
    #[command(flatten)]
    components: ComponentArgs,
}

/// A failure to report: code, one-line message, optional detail lines.
#[derive(Debug)]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub details: Vec<String>,
}

impl CliError {
    fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_owned(),
            message: message.into(),
            details: Vec::new(),
        }
    }
}

impl<E: ErrorCode + std::fmt::Display> From<E> for CliError {
    fn from(e: E) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}: {}", e.code, one_line(&e.message));
            for d in &e.details {
                eprintln!("  {d}");
            }
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Corpus(cmd) => corpus(cmd),
        Command::Index(cmd) => index(cmd),
        Command::Generate(args) => generate(args),
        Command::Serve { config } => serve_cmd(&config),
        Command::Eval(EvalCmd::Run(args)) => eval_run(args),
    }
}

fn corpus(cmd: CorpusCmd) -> Result<(), CliError> {
    match cmd {
        CorpusCmd::Validate { root, strict } => {
            let loaded = load_corpus(&root, strict).map_err(|e| {
                let details = match &e {
                    CorpusLoadError::ShapeViolation(v) => {
                        v.iter().map(ToString::to_string).collect()
                    }
                    CorpusLoadError::InvalidEntries(r) => {
                        r.violations.iter().map(ToString::to_string).collect()
                    }
                    _ => Vec::new(),
                };
                let summary = match &e {
                    CorpusLoadError::ShapeViolation(v) => format!(
                        "corpus does not have the full shape ({} violations)",
                        v.len()
                    ),
                    CorpusLoadError::InvalidEntries(r) => {
                        format!("corpus has {} invalid entries", r.violations.len())
                    }
                    other => other.to_string(),
                };
                CliError {
                    code: e.code().to_owned(),
                    message: summary,
                    details,
                }
            })?;
            let report = validate_corpus(&loaded.corpus, ValidationMode::Lenient);
            if !report.is_valid() {
                return Err(CliError {
                    code: "InvalidEntries".into(),
                    message: format!("corpus has {} invalid entries", report.violations.len()),
                    details: report.violations.iter().map(ToString::to_string).collect(),
                });
            }
            println!(
                "ok: {} entries in {} categories",
                loaded.corpus.len(),
                loaded.corpus.categories().len()
            );
            Ok(())
        }
        CorpusCmd::Stats { root, out } => {
            let loaded = load_corpus(&root, false)?;
            let stats = loaded
                .stats()
                .map_err(|e| CliError::new("EmptyCorpus", e.to_string()))?;
            corpus_io::write_stats_csv(&stats, &out)?;
            Ok(())
        }
        CorpusCmd::InitSample { out } => {
            corpus_io::sample::init(&out)?;
            println!("wrote sample corpus to {}", out.display());
            Ok(())
        }
    }
}

fn embedder_config(args: &EmbedderArgs) -> Result<EmbedderConfig, CliError> {
    Ok(match &args.config {
        Some(path) => ServiceConfig::load(path)?.embedder,
        None => EmbedderConfig::local(args.dim),
    })
}

fn index(cmd: IndexCmd) -> Result<(), CliError> {
    match cmd {
        IndexCmd::Build {
            root,
            snapshot,
            embedder,
        } => {
            let embedder = embedder_config(&embedder)?.build()?;
            let corpus = load_corpus(&root, false)?;
            let index = build_index(&corpus.corpus, embedder.as_ref())?;
            save_snapshot(&index, &snapshot)?;
            println!(
                "indexed {} entries into {}",
                index.len(),
                snapshot.display()
            );
            Ok(())
        }
        IndexCmd::Search {
            snapshot,
            query,
            k,
            embedder,
        } => {
            let embedder = embedder_config(&embedder)?.build()?;
            let index = load_snapshot(&snapshot)?;
            let vector = embedder.embed_text(&query)?;
            for hit in index.search_top_k(&vector, k)? {
                println!("{}\t{}\t{:.3}", hit.rank, hit.entry_id, hit.score);
            }
            Ok(())
        }
    }
}

fn component_config(args: &ComponentArgs) -> Result<ServiceConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => ServiceConfig::load(path)?,
        None => ServiceConfig::default(),
    };
    if let Some(root) = &args.root {
        cfg.corpus_root = root.clone();
    }
    if let Some(p) = &args.providers_file {
        cfg.providers = Some(p.clone());
    }
    if let Some(h) = &args.host_binary {
        cfg.executor.host_binary = h.clone();
    }
    if let Some(r) = &args.runner {
        cfg.executor.runner_path = r.clone();
    }
    if let Some(t) = args.timeout {
        cfg.executor.timeout_secs = t;
    }
    if let Some(k) = args.k {
        cfg.generation.k = k;
    }
    Ok(cfg)
}

/// Builds a pipeline; retrieval is only wired when `retrieval` is set.
fn build_pipeline(
    cfg: &ServiceConfig,
    snapshot: Option<&Path>,
    gateway: Arc<Gateway>,
    retrieval: bool,
) -> Result<Pipeline, CliError> {
    let retriever: Arc<dyn Retriever> = if retrieval {
        let corpus = Arc::new(load_corpus(&cfg.corpus_root, false)?);
        let embedder = cfg.embedder.build()?;
        let index = match snapshot {
            Some(path) => open_index(&corpus, embedder.as_ref(), path)?,
            None => SharedIndex::new(build_index(&corpus.corpus, embedder.as_ref())?),
        };
        Arc::new(IndexRetriever {
            embedder,
            index,
            corpus,
        })
    } else {
        Arc::new(NoRetriever)
    };
    let runner: Arc<dyn ScriptRunner> = Arc::new(HostExecutor::new(cfg.executor.clone()));
    Ok(Pipeline {
        retriever,
        gateway,
        runner,
        template: PromptTemplate::default(),
        render: cfg.render.clone(),
    })
}

fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let cfg = component_config(&args.components)?;
    let gateway = Gateway::new(cfg.registry()?);
    gateway.check_credentials(&args.provider)?;
    let mode = if args.base { Mode::Base } else { Mode::Rag };
    let pipeline = build_pipeline(
        &cfg,
        args.components.snapshot.as_deref(),
        Arc::new(gateway),
        mode == Mode::Rag,
    )?;
    let settings = SessionSettings {
        mode,
        k: cfg.generation.k,
        budget: cfg.generation.budget,
        execute: args.execute || args.render.is_some(),
        render: args.render.is_some(),
    };
    let session = Session::new("cli", &args.provider, settings);
    let turn = pipeline.generate(&session, &args.query, args.render.as_deref())?;
    if args.dump_prompt {
        if let Some(prompt) = &turn.prompt {
            print!("{}", prompt.rendered);
            if !prompt.rendered.ends_with('\n') {
                println!();
            }
            println!("{PROMPT_DELIMITER}");
        }
    }
    if let Some(script) = &turn.script {
        println!("{script}");
    }
    if let Some(exec) = &turn.execution {
        eprintln!(
            "execution: {:?} in {:.2}s",
            exec.failure_kind, exec.duration_secs
        );
    }
    match turn.failure {
        Some(f) => Err(CliError::new(
            &f.code,
            format!("{:?}: {}", f.stage, f.message),
        )),
        None => Ok(()),
    }
}

fn serve_cmd(config: &Path) -> Result<(), CliError> {
    let cfg = ServiceConfig::load(config)?;
    let app = App::build(cfg)?;
    let state = ServiceState::new(app);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::new("IoError", e.to_string()))?;
    runtime
        .block_on(serve(state))
        .map_err(|e| CliError::new("ServeError", e.to_string()))
}

fn eval_run(args: EvalRunArgs) -> Result<(), CliError> {
    let cfg = component_config(&args.components)?;
    let gateway = Gateway::new(cfg.registry()?);
    for p in &args.providers {
        gateway.check_credentials(p)?;
    }
    let prompts = load_prompts(&args.prompts)?;
    let needs_retrieval = args.conditions.contains(&Mode::Rag);
    let pipeline = build_pipeline(
        &cfg,
        args.components.snapshot.as_deref(),
        Arc::new(gateway),
        needs_retrieval,
    )?;
    let scorer: Option<Box<dyn AlignmentScorer>> = match (&args.scorer, &cfg.scorer) {
        (Some(url), _) => Some(Box::new(HttpScorer::new(url, Duration::from_secs(60)))),
        (None, Some(s)) => Some(Box::new(HttpScorer::new(
            &s.endpoint,
            Duration::from_secs_f64(s.timeout_secs),
        ))),
        (None, None) => None,
    };
    let eval_cfg = EvalConfig {
        conditions: args.conditions,
        k: cfg.generation.k,
        budget: cfg.generation.budget,
        workers: args.workers.max(1),
    };
    let output = run_eval(
        &pipeline,
        scorer.as_deref(),
        &prompts,
        &args.providers,
        &eval_cfg,
        &args.out,
        &EvalProgress::default(),
    )?;
    print!("{}", crate::evaluation::report_table(&output));
    eprintln!("wrote {}", args.out.join(REPORT_CSV).display());
    Ok(())
}
