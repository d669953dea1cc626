//! Generation turns and multi-turn refinement sessions.
//!
//! A turn runs retrieval (rag mode only), prompt assembly, completion, code
//! extraction and, when enabled, execution and rendering. A stage failure is
//! recorded on the turn and every later stage is left empty; the turn is
//! still stored.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rag3d_core::prompt::{
    assemble_prompt, extract_code_block, PromptContext, PromptRequest, PromptTemplate, Revision,
    DEFAULT_TOKEN_BUDGET,
};
use rag3d_core::Mode;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ErrorCode;
use crate::executor::{ExecutionResult, FailureKind, RenderManifest, RenderSpec, ScriptRunner};
use crate::gateway::{ChatMessage, ChatRequest, Gateway};
use crate::retrieval::{RetrievalContext, Retriever, DEFAULT_K};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionSettings {
    pub mode: Mode,
    pub k: usize,
    pub budget: usize,
    pub execute: bool,
    /// Implies `execute`.
    pub render: bool,
}

impl Default for SessionSettings {
    fn default() -> Self {
        Self {
            mode: Mode::Rag,
            k: DEFAULT_K,
            budget: DEFAULT_TOKEN_BUDGET,
            execute: false,
            render: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    RetrievalFailed,
    PromptFailed,
    LlmFailed,
    ExecutionFailed,
    RenderFailed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    pub code: String,
    pub message: String,
    /// Infrastructure trouble rather than a property of the generated code.
    pub harness_fault: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTurn {
    pub turn_index: u32,
    pub user_request: String,
    pub mode: Mode,
    /// The request so far: the first request followed by every follow-up,
    /// space separated.
    pub cumulative_request: String,
    pub retrieval: Option<RetrievalContext>,
    pub prompt: Option<PromptContext>,
    pub raw_response: Option<String>,
    pub script: Option<String>,
    pub llm_attempts: Option<u32>,
    pub llm_latency_ms: Option<u64>,
    pub execution: Option<ExecutionResult>,
    /// Relative to the session directory when stored in a session.
    pub render_path: Option<String>,
    pub render_manifest: Option<RenderManifest>,
    pub failure: Option<StageFailure>,
}

impl GenerationTurn {
    fn new(turn_index: u32, user_request: &str, mode: Mode, cumulative_request: String) -> Self {
        Self {
            turn_index,
            user_request: user_request.to_owned(),
            mode,
            cumulative_request,
            retrieval: None,
            prompt: None,
            raw_response: None,
            script: None,
            llm_attempts: None,
            llm_latency_ms: None,
            execution: None,
            render_path: None,
            render_manifest: None,
            failure: None,
        }
    }

    fn fail(
        mut self,
        stage: Stage,
        code: &str,
        message: impl Into<String>,
        harness_fault: bool,
    ) -> Self {
        self.failure = Some(StageFailure {
            stage,
            code: code.to_owned(),
            message: message.into(),
            harness_fault,
        });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub provider_id: String,
    pub settings: SessionSettings,
    pub turns: Vec<GenerationTurn>,
}

impl Session {
    pub fn new(
        session_id: impl Into<String>,
        provider_id: impl Into<String>,
        settings: SessionSettings,
    ) -> Self {
        Self {
            session_id: session_id.into(),
            provider_id: provider_id.into(),
            settings,
            turns: Vec::new(),
        }
    }

    fn next_index(&self) -> u32 {
        self.turns.len() as u32 + 1
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("request is empty")]
    EmptyRequest,
    #[error("session has no turn to refine")]
    NoPriorTurn,
    #[error("unknown provider `{0}`")]
    UnknownProvider(String),
    #[error("session `{0}` not found")]
    NotFound(String),
    #[error("invalid session id `{0}`")]
    InvalidId(String),
    #[error("session store error at {path}: {message}")]
    Store { path: PathBuf, message: String },
}

impl ErrorCode for SessionError {
    fn code(&self) -> &'static str {
        match self {
            Self::EmptyRequest => "EmptyRequest",
            Self::NoPriorTurn => "NoPriorTurn",
            Self::UnknownProvider(_) => "UnknownProvider",
            Self::NotFound(_) => "SessionNotFound",
            Self::InvalidId(_) => "InvalidSessionId",
            Self::Store { .. } => "SessionStore",
        }
    }
}

/// The stages a turn runs through, shared by sessions and evaluation.
pub struct Pipeline {
    pub retriever: Arc<dyn Retriever>,
    pub gateway: Arc<Gateway>,
    pub runner: Arc<dyn ScriptRunner>,
    pub template: PromptTemplate,
    /// Camera and image defaults; the output path is set per turn.
    pub render: RenderSpec,
}

impl Pipeline {
    /// Runs a first-request turn. `render_out` is where the image goes when
    /// the session renders.
    pub fn generate(
        &self,
        session: &Session,
        request: &str,
        render_out: Option<&Path>,
    ) -> Result<GenerationTurn, SessionError> {
        if request.trim().is_empty() {
            return Err(SessionError::EmptyRequest);
        }
        let turn = GenerationTurn::new(
            session.next_index(),
            request,
            session.settings.mode,
            request.to_owned(),
        );
        Ok(self.run(session, turn, None, render_out))
    }

    /// Runs a follow-up turn revising the latest script.
    pub fn refine(
        &self,
        session: &Session,
        follow_up: &str,
        render_out: Option<&Path>,
    ) -> Result<GenerationTurn, SessionError> {
        if follow_up.trim().is_empty() {
            return Err(SessionError::EmptyRequest);
        }
        let previous = session.turns.last().ok_or(SessionError::NoPriorTurn)?;
        let cumulative = format!("{} {}", previous.cumulative_request, follow_up);
        let revision = session
            .turns
            .iter()
            .rev()
            .find_map(|t| t.script.clone())
            .map(|previous_script| Revision {
                original_request: previous.cumulative_request.clone(),
                previous_script,
            });
        let turn = GenerationTurn::new(
            session.next_index(),
            follow_up,
            session.settings.mode,
            cumulative,
        );
        Ok(self.run(session, turn, revision.as_ref(), render_out))
    }

    fn run(
        &self,
        session: &Session,
        mut turn: GenerationTurn,
        revision: Option<&Revision>,
        render_out: Option<&Path>,
    ) -> GenerationTurn {
        let settings = &session.settings;

        let exemplars = if settings.mode == Mode::Rag {
            match self
                .retriever
                .retrieve(&turn.cumulative_request, settings.k)
            {
                Ok(ctx) => {
                    let ex = ctx.exemplars();
                    turn.retrieval = Some(ctx);
                    Some(ex)
                }
                Err(e) => return turn.fail(Stage::RetrievalFailed, e.code(), e.to_string(), true),
            }
        } else {
            None
        };

        let prompt = assemble_prompt(
            PromptRequest {
                user_request: &turn.user_request,
                exemplars: exemplars.as_deref(),
                revision,
            },
            &self.template,
            settings.budget,
        );
        let prompt = match prompt {
            Ok(p) => p,
            Err(e) => return turn.fail(Stage::PromptFailed, "PromptError", e.to_string(), true),
        };
        let mut messages = Vec::with_capacity(2);
        if !prompt.system_preamble.is_empty() {
            messages.push(ChatMessage::system(prompt.system_preamble.clone()));
        }
        messages.push(ChatMessage::user(prompt.user_message.clone()));
        turn.prompt = Some(prompt);

        let request = ChatRequest {
            provider_id: session.provider_id.clone(),
            messages,
            temperature: None,
        };
        let response = match self.gateway.complete(&request) {
            Ok(r) => r,
            Err(e) => return turn.fail(Stage::LlmFailed, e.code(), e.to_string(), true),
        };
        turn.llm_attempts = Some(response.attempts);
        turn.llm_latency_ms = Some(response.latency_ms);
        let extracted = extract_code_block(&response.content);
        turn.raw_response = Some(response.content);
        let script = match extracted {
            Ok(s) => s,
            Err(e) => return turn.fail(Stage::LlmFailed, "EmptyResponse", e.to_string(), false),
        };
        turn.script = Some(script);

        if !(settings.execute || settings.render) {
            return turn;
        }
        let spec = match (settings.render, render_out) {
            (true, Some(out)) => Some(self.render.at(out)),
            _ => None,
        };
        let script = turn.script.as_deref().unwrap_or_default();
        let run = match self.runner.run(script, spec.as_ref()) {
            Ok(run) => run,
            Err(e) => return turn.fail(Stage::ExecutionFailed, e.code(), e.to_string(), true),
        };
        let execution = run.execution;
        if !execution.success {
            let harness = execution.failure_kind == FailureKind::LauncherError;
            let message = format!(
                "{:?}: {}",
                execution.failure_kind,
                last_line(&execution.stderr_excerpt)
            );
            turn.execution = Some(execution);
            let code = match turn.execution.as_ref().map(|e| e.failure_kind) {
                Some(FailureKind::Timeout) => "Timeout",
                Some(FailureKind::LauncherError) => "LauncherError",
                _ => "ScriptError",
            };
            return turn.fail(Stage::ExecutionFailed, code, message, harness);
        }
        turn.execution = Some(execution);
        match run.render {
            None => turn,
            Some(Ok(artifact)) => {
                turn.render_path = Some(artifact.path.display().to_string());
                turn.render_manifest = Some(artifact.manifest);
                turn
            }
            Some(Err(e)) => turn.fail(Stage::RenderFailed, e.code(), e.to_string(), false),
        }
    }
}

fn last_line(text: &str) -> &str {
    text.lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("")
        .trim()
}

const SESSION_FILE: &str = "session.json";

#[derive(Serialize, Deserialize)]
struct SessionHeader {
    session_id: String,
    provider_id: String,
    settings: SessionSettings,
}

/// Append-only session directories: `session.json`, then `turn_<n>.json`
/// and `render_<n>.png` per turn.
#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl SessionStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, id: &str) -> Result<PathBuf, SessionError> {
        if !valid_id(id) {
            return Err(SessionError::InvalidId(id.to_owned()));
        }
        Ok(self.root.join(id))
    }

    pub fn render_file_name(turn_index: u32) -> String {
        format!("render_{turn_index}.png")
    }

    fn store_err(path: &Path, e: impl std::fmt::Display) -> SessionError {
        SessionError::Store {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SessionError> {
        let dir = path.parent().unwrap_or(Path::new("."));
        let bytes = serde_json::to_vec_pretty(value).map_err(|e| Self::store_err(path, e))?;
        let write = || -> io::Result<()> {
            let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
            tmp.write_all(&bytes)?;
            tmp.as_file().sync_all()?;
            tmp.persist(path).map_err(|e| e.error)?;
            Ok(())
        };
        write().map_err(|e| Self::store_err(path, e))
    }

    pub fn create(&self, session: &Session) -> Result<(), SessionError> {
        let dir = self.session_dir(&session.session_id)?;
        fs::create_dir_all(&dir).map_err(|e| Self::store_err(&dir, e))?;
        let header = SessionHeader {
            session_id: session.session_id.clone(),
            provider_id: session.provider_id.clone(),
            settings: session.settings,
        };
        Self::write_json(&dir.join(SESSION_FILE), &header)?;
        for turn in &session.turns {
            self.append_turn(&session.session_id, turn)?;
        }
        Ok(())
    }

    pub fn append_turn(&self, id: &str, turn: &GenerationTurn) -> Result<(), SessionError> {
        let dir = self.session_dir(id)?;
        Self::write_json(&dir.join(format!("turn_{}.json", turn.turn_index)), turn)
    }

    pub fn load(&self, id: &str) -> Result<Session, SessionError> {
        let dir = self.session_dir(id)?;
        let header_path = dir.join(SESSION_FILE);
        let text = match fs::read_to_string(&header_path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(SessionError::NotFound(id.to_owned()))
            }
            Err(e) => return Err(Self::store_err(&header_path, e)),
        };
        let header: SessionHeader =
            serde_json::from_str(&text).map_err(|e| Self::store_err(&header_path, e))?;
        let mut session = Session::new(header.session_id, header.provider_id, header.settings);
        loop {
            let path = dir.join(format!("turn_{}.json", session.next_index()));
            let text = match fs::read_to_string(&path) {
                Ok(t) => t,
                Err(e) if e.kind() == io::ErrorKind::NotFound => break,
                Err(e) => return Err(Self::store_err(&path, e)),
            };
            let turn = serde_json::from_str(&text).map_err(|e| Self::store_err(&path, e))?;
            session.turns.push(turn);
        }
        Ok(session)
    }
}

/// Sessions backed by a store, with one turn in flight per session.
pub struct SessionManager {
    pipeline: Arc<Pipeline>,
    store: SessionStore,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl SessionManager {
    pub fn new(pipeline: Arc<Pipeline>, store: SessionStore) -> Self {
        Self {
            pipeline,
            store,
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn create(
        &self,
        provider_id: &str,
        settings: SessionSettings,
    ) -> Result<Session, SessionError> {
        if !self.pipeline.gateway.registry().contains(provider_id) {
            return Err(SessionError::UnknownProvider(provider_id.to_owned()));
        }
        let session = Session::new(
            uuid::Uuid::new_v4().simple().to_string(),
            provider_id,
            settings,
        );
        self.store.create(&session)?;
        Ok(session)
    }

    pub fn get(&self, id: &str) -> Result<Session, SessionError> {
        self.store.load(id)
    }

    fn lock(&self, id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(id.to_owned()).or_default().clone()
    }

    pub fn generate(&self, id: &str, request: &str) -> Result<GenerationTurn, SessionError> {
        self.turn(id, |p, s, out| p.generate(s, request, out))
    }

    pub fn refine(&self, id: &str, follow_up: &str) -> Result<GenerationTurn, SessionError> {
        self.turn(id, |p, s, out| p.refine(s, follow_up, out))
    }

    fn turn<F>(&self, id: &str, run: F) -> Result<GenerationTurn, SessionError>
    where
        F: FnOnce(&Pipeline, &Session, Option<&Path>) -> Result<GenerationTurn, SessionError>,
    {
        let lock = self.lock(id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let session = self.store.load(id)?;
        let dir = self.store.session_dir(id)?;
        let file_name = SessionStore::render_file_name(session.next_index());
        let out = dir.join(&file_name);
        let mut turn = run(&self.pipeline, &session, Some(&out))?;
        if turn.render_path.is_some() {
            turn.render_path = Some(file_name);
        }
        self.store.append_turn(id, &turn)?;
        Ok(turn)
    }
}
