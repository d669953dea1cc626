//! Batch evaluation: every prompt under every (provider, condition), scored
//! for compilation and, when a scorer is available, prompt-image alignment.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use base64::Engine as _;
use rag3d_core::metrics::{
    aggregate_report, CellMetrics, CompileOutcome, EvaluationReport, MetricsError, ProviderCell,
};
use rag3d_core::Mode;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ErrorCode;
use crate::gateway::GatewayError;
use crate::session::{GenerationTurn, Pipeline, Session, SessionSettings, Stage};

pub const ITEMS_FILE: &str = "items.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const CSV_HEADER: &str = "model,compilation_base,compilation_rag,alignment_base,alignment_rag";
pub const AVERAGE_ROW: &str = "Average";

const ALIGNMENT_POLICY: &str =
    "alignment is averaged over items that compiled and rendered; failed items contribute no alignment sample";
const SCORER_DOWN: &str = "alignment scorer unreachable; report is compilation-only";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalPrompt {
    pub prompt_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read prompt set {path}: {message}")]
    PromptSet { path: PathBuf, message: String },
    #[error("prompt set line {line}: {message}")]
    PromptLine { line: usize, message: String },
    #[error("prompt id `{0}` appears more than once")]
    DuplicatePromptId(String),
    #[error("prompt set is empty")]
    EmptyPromptSet,
    #[error("prompt `{0}` has empty text or an id unusable as a file name")]
    InvalidPrompt(String),
    #[error("no conditions selected")]
    NoConditions,
    #[error("no providers selected")]
    NoProviders,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("cannot write {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("cannot aggregate report: {0}")]
    Metrics(#[from] MetricsError),
}

impl ErrorCode for EvalError {
    fn code(&self) -> &'static str {
        match self {
            Self::PromptSet { .. } => "PromptSetUnreadable",
            Self::PromptLine { .. } => "PromptSetParse",
            Self::DuplicatePromptId(_) => "DuplicatePromptId",
            Self::EmptyPromptSet => "EmptyPromptSet",
            Self::InvalidPrompt(_) => "InvalidPrompt",
            Self::NoConditions => "NoConditions",
            Self::NoProviders => "NoProviders",
            Self::Gateway(e) => e.code(),
            Self::Io { .. } => "IoError",
            Self::Metrics(_) => "MetricsError",
        }
    }
}

fn safe_component(s: &str) -> bool {
    !s.is_empty()
        && s != "."
        && s != ".."
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
}

/// Parses line-delimited prompt records, skipping blank lines.
pub fn parse_prompts(source: &str) -> Result<Vec<EvalPrompt>, EvalError> {
    let mut prompts = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in source.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let prompt: EvalPrompt = serde_json::from_str(line).map_err(|e| EvalError::PromptLine {
            line: line_no,
            message: e.to_string(),
        })?;
        if prompt.text.trim().is_empty() {
            return Err(EvalError::PromptLine {
                line: line_no,
                message: "text is empty".into(),
            });
        }
        if !safe_component(&prompt.prompt_id) {
            return Err(EvalError::PromptLine {
                line: line_no,
                message: format!(
                    "prompt_id `{}` must be letters, digits, '.', '-' or '_'",
                    prompt.prompt_id
                ),
            });
        }
        if !seen.insert(prompt.prompt_id.clone()) {
            return Err(EvalError::DuplicatePromptId(prompt.prompt_id));
        }
        prompts.push(prompt);
    }
    if prompts.is_empty() {
        return Err(EvalError::EmptyPromptSet);
    }
    Ok(prompts)
}

pub fn load_prompts(path: &Path) -> Result<Vec<EvalPrompt>, EvalError> {
    let source = fs::read_to_string(path).map_err(|e| EvalError::PromptSet {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_prompts(&source)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub score: f64,
    pub scorer_id: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScorerError {
    #[error("image {0} does not exist")]
    MissingImage(String),
    #[error("alignment scorer unreachable: {0}")]
    Unreachable(String),
    #[error("alignment scorer returned a bad response: {0}")]
    BadResponse(String),
}

impl ErrorCode for ScorerError {
    fn code(&self) -> &'static str {
        match self {
            Self::MissingImage(_) => "MissingImage",
            Self::Unreachable(_) => "ScorerUnreachable",
            Self::BadResponse(_) => "ScorerBadResponse",
        }
    }
}

/// External text-image similarity model. Implementations return the raw
/// score; clamping happens in [`score_alignment`].
pub trait AlignmentScorer: Send + Sync {
    fn score(&self, text: &str, png: &[u8]) -> Result<AlignmentScore, ScorerError>;
}

/// Client for `POST {text, image_b64} -> {score, scorer_id}`.
pub struct HttpScorer {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpScorer {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            agent,
        }
    }
}

#[derive(Deserialize)]
struct ScorerReply {
    score: f64,
    scorer_id: String,
}

impl AlignmentScorer for HttpScorer {
    fn score(&self, text: &str, png: &[u8]) -> Result<AlignmentScore, ScorerError> {
        let body = serde_json::json!({
            "text": text,
            "image_b64": base64::engine::general_purpose::STANDARD.encode(png),
        });
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json")
            .send_json(&body)
            .map_err(|e| ScorerError::Unreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ScorerError::Unreachable(e.to_string()))?;
        if status >= 500 {
            return Err(ScorerError::Unreachable(format!("status {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(ScorerError::BadResponse(format!("status {status}")));
        }
        let reply: ScorerReply =
            serde_json::from_str(&text).map_err(|e| ScorerError::BadResponse(e.to_string()))?;
        Ok(AlignmentScore {
            score: reply.score,
            scorer_id: reply.scorer_id,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredAlignment {
    pub score: f64,
    pub scorer_id: String,
    /// The raw score when it had to be clamped into `[0, 1]`.
    pub clamped_from: Option<f64>,
}

/// Scores a rendered image against its prompt, clamping into `[0, 1]`.
/// The image must exist before the scorer is contacted.
pub fn score_alignment(
    scorer: &dyn AlignmentScorer,
    prompt_text: &str,
    image_path: &Path,
) -> Result<ScoredAlignment, ScorerError> {
    let png = fs::read(image_path)
        .map_err(|_| ScorerError::MissingImage(image_path.display().to_string()))?;
    let raw = scorer.score(prompt_text, &png)?;
    if !raw.score.is_finite() {
        return Err(ScorerError::BadResponse(format!(
            "score {} is not finite",
            raw.score
        )));
    }
    let score = raw.score.clamp(0.0, 1.0);
    let clamped_from = (score != raw.score).then_some(raw.score);
    if let Some(r) = clamped_from {
        log::warn!("alignment score {r} clamped to {score}");
    }
    Ok(ScoredAlignment {
        score,
        scorer_id: raw.scorer_id,
        clamped_from,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemArtifacts {
    pub prompt: Option<String>,
    pub script: Option<String>,
    pub render: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub prompt_id: String,
    pub provider_id: String,
    pub condition: Mode,
    pub outcome: CompileOutcome,
    /// Present only for compiled, rendered, scored items.
    pub alignment: Option<f64>,
    pub failure_stage: Option<Stage>,
    pub failure_code: Option<String>,
    pub notes: Vec<String>,
    /// Relative to the output directory.
    pub artifacts: ItemArtifacts,
}

/// Compilation verdict for a turn run with execution on.
pub fn classify_turn(turn: &GenerationTurn) -> CompileOutcome {
    match &turn.failure {
        None => CompileOutcome::Compiled,
        Some(f) if f.stage == Stage::RenderFailed => CompileOutcome::Compiled,
        Some(f) if f.harness_fault => CompileOutcome::Excluded,
        Some(_) => CompileOutcome::Failed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub conditions: Vec<Mode>,
    pub k: usize,
    pub budget: usize,
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let s = SessionSettings::default();
        Self {
            conditions: vec![Mode::Base, Mode::Rag],
            k: s.k,
            budget: s.budget,
            workers: 1,
        }
    }
}

#[derive(Debug, Default)]
pub struct EvalProgress {
    pub completed: AtomicUsize,
    pub total: AtomicUsize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub report: EvaluationReport,
    /// Scorer identities seen, sorted.
    pub scorer_ids: Vec<String>,
    pub annotations: Vec<String>,
    pub items: Vec<ItemResult>,
}

struct Job<'a> {
    prompt: &'a EvalPrompt,
    provider: &'a str,
    condition: Mode,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> EvalError {
    EvalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn path_component(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

struct Runner<'a> {
    pipeline: &'a Pipeline,
    scorer: Option<&'a dyn AlignmentScorer>,
    scorer_down: &'a AtomicBool,
    cfg: &'a EvalConfig,
    out: &'a Path,
}

impl Runner<'_> {
    fn run(&self, job: &Job<'_>) -> Result<(ItemResult, Option<String>), EvalError> {
        let rel = PathBuf::from("items")
            .join(path_component(job.provider))
            .join(job.condition.as_str())
            .join(&job.prompt.prompt_id);
        let dir = self.out.join(&rel);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let settings = SessionSettings {
            mode: job.condition,
            k: self.cfg.k,
            budget: self.cfg.budget,
            execute: true,
            render: true,
        };
        let session = Session::new("eval", job.provider, settings);
        let render_out = dir.join("render.png");
        let turn = match self
            .pipeline
            .generate(&session, &job.prompt.text, Some(&render_out))
        {
            Ok(t) => t,
            Err(_) => return Err(EvalError::InvalidPrompt(job.prompt.prompt_id.clone())),
        };

        let rel_str = |name: &str| rel.join(name).to_string_lossy().replace('\\', "/");
        let mut artifacts = ItemArtifacts {
            prompt: None,
            script: None,
            render: None,
        };
        if let Some(prompt) = &turn.prompt {
            let p = dir.join("prompt.txt");
            fs::write(&p, &prompt.rendered).map_err(|e| io_err(&p, e))?;
            artifacts.prompt = Some(rel_str("prompt.txt"));
        }
        if let Some(script) = &turn.script {
            let p = dir.join("script.py");
            fs::write(&p, script).map_err(|e| io_err(&p, e))?;
            artifacts.script = Some(rel_str("script.py"));
        }
        if turn.render_path.is_some() {
            artifacts.render = Some(rel_str("render.png"));
        }

        let outcome = classify_turn(&turn);
        let mut notes = Vec::new();
        if let Some(f) = &turn.failure {
            notes.push(format!("{}: {}", f.code, f.message));
        }
        let mut alignment = None;
        let mut scorer_id = None;
        if let (CompileOutcome::Compiled, Some(scorer), true) =
            (outcome, self.scorer, turn.render_path.is_some())
        {
            if !self.scorer_down.load(Ordering::SeqCst) {
                match score_alignment(scorer, &job.prompt.text, &render_out) {
                    Ok(s) => {
                        if let Some(raw) = s.clamped_from {
                            notes.push(format!("alignment {raw} clamped to {}", s.score));
                        }
                        alignment = Some(s.score);
                        scorer_id = Some(s.scorer_id);
                    }
                    Err(ScorerError::Unreachable(msg)) => {
                        log::error!("alignment scorer unreachable: {msg}");
                        self.scorer_down.store(true, Ordering::SeqCst);
                    }
                    Err(e) => notes.push(format!("{}: {e}", e.code())),
                }
            }
        }
        let item = ItemResult {
            prompt_id: job.prompt.prompt_id.clone(),
            provider_id: job.provider.to_owned(),
            condition: job.condition,
            outcome,
            alignment,
            failure_stage: turn.failure.as_ref().map(|f| f.stage),
            failure_code: turn.failure.as_ref().map(|f| f.code.clone()),
            notes,
            artifacts,
        };
        Ok((item, scorer_id))
    }
}

/// Runs the grid and writes `items.jsonl`, `report.json`, `report.csv` and
/// `report.txt` under `out`. Output depends only on the inputs and the
/// behaviour of the injected components, never on timing.
pub fn run_eval(
    pipeline: &Pipeline,
    scorer: Option<&dyn AlignmentScorer>,
    prompts: &[EvalPrompt],
    providers: &[String],
    cfg: &EvalConfig,
    out: &Path,
    progress: &EvalProgress,
) -> Result<EvalOutput, EvalError> {
    if prompts.is_empty() {
        return Err(EvalError::EmptyPromptSet);
    }
    if let Some(bad) = prompts
        .iter()
        .find(|p| p.text.trim().is_empty() || !safe_component(&p.prompt_id))
    {
        return Err(EvalError::InvalidPrompt(bad.prompt_id.clone()));
    }
    if cfg.conditions.is_empty() {
        return Err(EvalError::NoConditions);
    }
    if providers.is_empty() {
        return Err(EvalError::NoProviders);
    }
    for p in providers {
        pipeline.gateway.check_credentials(p)?;
    }
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;

    let mut conditions = cfg.conditions.clone();
    conditions.sort();
    conditions.dedup();
    let mut jobs = Vec::new();
    for provider in providers {
        for &condition in &conditions {
            for prompt in prompts {
                jobs.push(Job {
                    prompt,
                    provider,
                    condition,
                });
            }
        }
    }
    progress.total.store(jobs.len(), Ordering::SeqCst);
    progress.completed.store(0, Ordering::SeqCst);

    let scorer_down = AtomicBool::new(false);
    let runner = Runner {
        pipeline,
        scorer,
        scorer_down: &scorer_down,
        cfg,
        out,
    };
    let next = AtomicUsize::new(0);
    type Slot = Mutex<Option<Result<(ItemResult, Option<String>), EvalError>>>;
    let results: Vec<Slot> = jobs.iter().map(|_| Mutex::new(None)).collect();
    thread::scope(|scope| {
        for _ in 0..cfg.workers.clamp(1, jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let r = runner.run(job);
                *results[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
                progress.completed.fetch_add(1, Ordering::SeqCst);
            });
        }
    });

    let mut items = Vec::with_capacity(jobs.len());
    let mut scorer_ids = BTreeSet::new();
    for slot in results {
        let (item, id) = slot
            .into_inner()
            .unwrap_or_else(|e| e.into_inner())
            .expect("every job ran")?;
        scorer_ids.extend(id);
        items.push(item);
    }

    let mut annotations = vec![ALIGNMENT_POLICY.to_owned()];
    if scorer.is_none() {
        annotations.push("no alignment scorer configured; report is compilation-only".to_owned());
    }
    if scorer_down.load(Ordering::SeqCst) {
        annotations.push(SCORER_DOWN.to_owned());
        for item in &mut items {
            item.alignment = None;
        }
        scorer_ids.clear();
    }

    let mut cells = Vec::new();
    for provider in providers {
        for &condition in &conditions {
            let metrics = CellMetrics::from_items(
                items
                    .iter()
                    .filter(|it| &it.provider_id == provider && it.condition == condition)
                    .map(|it| (it.outcome, it.alignment)),
            );
            cells.push(ProviderCell {
                provider: provider.clone(),
                mode: condition,
                metrics,
            });
        }
    }
    let output = EvalOutput {
        report: aggregate_report(&cells)?,
        scorer_ids: scorer_ids.into_iter().collect(),
        annotations,
        items,
    };
    write_outputs(&output, out)?;
    Ok(output)
}

fn fmt_opt(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(String::new, |v| format!("{v:.decimals$}"))
}

/// Table-shaped CSV: one row per provider plus the averages row.
pub fn report_csv(report: &EvaluationReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    let line = |name: &str, get: &dyn Fn(Mode) -> (Option<f64>, Option<f64>)| {
        let (cb, ab) = get(Mode::Base);
        let (cr, ar) = get(Mode::Rag);
        format!(
            "{name},{},{},{},{}\n",
            fmt_opt(cb, 1),
            fmt_opt(cr, 1),
            fmt_opt(ab, 3),
            fmt_opt(ar, 3)
        )
    };
    for row in &report.rows {
        out.push_str(&line(&row.provider, &|m| {
            row.cells
                .get(&m)
                .map_or((None, None), |c| (c.compilation_rate, c.alignment_mean))
        }));
    }
    out.push_str(&line(AVERAGE_ROW, &|m| {
        report
            .averages
            .get(&m)
            .map_or((None, None), |a| (a.compilation_rate, a.alignment_mean))
    }));
    out
}

/// Human-readable table with the report's annotations as a header.
pub fn report_table(output: &EvalOutput) -> String {
    let csv = report_csv(&output.report);
    let rows: Vec<Vec<String>> = csv
        .lines()
        .skip(1)
        .map(|l| {
            l.split(',')
                .map(|c| {
                    if c.is_empty() {
                        "-".to_owned()
                    } else {
                        c.to_owned()
                    }
                })
                .collect()
        })
        .collect();
    let header = [
        "Model",
        "Comp. Base",
        "Comp. RAG",
        "Align. Base",
        "Align. RAG",
    ];
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    for note in &output.annotations {
        let _ = writeln!(out, "# {note}");
    }
    if !output.scorer_ids.is_empty() {
        let _ = writeln!(out, "# scorer: {}", output.scorer_ids.join(", "));
    }
    let fmt_row = |cells: &[&str]| {
        let mut line = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(line, "{c:<w$}");
            } else {
                let _ = write!(line, " | {c:>w$}");
            }
        }
        line.push('\n');
        line
    };
    out.push_str(&fmt_row(&header));
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&rule.join("-+-"));
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        if i + 1 == rows.len() {
            out.push_str(&rule.join("-+-"));
            out.push('\n');
        }
        let cells: Vec<&str> = row.iter().map(String::as_str).collect();
        out.push_str(&fmt_row(&cells));
    }
    out
}

fn write_outputs(output: &EvalOutput, out: &Path) -> Result<(), EvalError> {
    let write = |name: &str, contents: String| {
        let p = out.join(name);
        fs::write(&p, contents).map_err(|e| io_err(&p, e))
    };
    let mut items = String::new();
    for item in &output.items {
        items.push_str(&serde_json::to_string(item).map_err(|e| io_err(out, e))?);
        items.push('\n');
    }
    write(ITEMS_FILE, items)?;
    let json = serde_json::to_string_pretty(output).map_err(|e| io_err(out, e))?;
    write(REPORT_JSON, json + "\n")?;
    write(REPORT_CSV, report_csv(&output.report))?;
    write(REPORT_TXT, report_table(output))
}
