//! Headless execution of generated scripts inside the modeling host.
//!
//! Each script runs in its own host process:
//!
//! ```text
//! <host> --background --python <runner> -- --script <file>
//!        [--render <out.png> --manifest <out.json> --width W --height H
//!         --azimuth A --elevation E --margin M [--fov F]]
//! ```
//!
//! The runner executes the script, frames the scene's bounding sphere and
//! writes the render followed by a JSON manifest describing the pose.

use std::fs;
use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use rag3d_core::camera::{
    fit_distance, Vec3, DEFAULT_AZIMUTH_DEG, DEFAULT_ELEVATION_DEG, DEFAULT_MARGIN,
    EMPTY_SCENE_DISTANCE,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ErrorCode;
use crate::sync::Semaphore;

pub const DEFAULT_TIMEOUT_SECS: f64 = 120.0;
pub const DEFAULT_RENDER_SIZE: u32 = 800;
pub const LIGHTING_PRESET: &str = "three-point-uniform";
/// Bytes of each output stream kept, taken from the end.
pub const EXCERPT_BYTES: usize = 4096;
/// Allowed disagreement between the manifest pose and the closed forms.
pub const POSE_TOLERANCE: f64 = 1e-6;

const POLL_INTERVAL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    None,
    ScriptError,
    Timeout,
    LauncherError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub success: bool,
    pub exit_code: i32,
    pub duration_secs: f64,
    pub stdout_excerpt: String,
    pub stderr_excerpt: String,
    pub failure_kind: FailureKind,
}

/// How a host process ended, before classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessOutcome {
    SpawnFailed,
    TimedOut,
    Exited(i32),
}

impl ProcessOutcome {
    pub fn classify(self) -> FailureKind {
        match self {
            Self::SpawnFailed => FailureKind::LauncherError,
            Self::TimedOut => FailureKind::Timeout,
            Self::Exited(0) => FailureKind::None,
            Self::Exited(_) => FailureKind::ScriptError,
        }
    }

    fn exit_code(self) -> i32 {
        match self {
            Self::Exited(code) => code,
            Self::SpawnFailed | Self::TimedOut => -1,
        }
    }
}

impl ExecutionResult {
    fn new(outcome: ProcessOutcome, duration: Duration, stdout: String, stderr: String) -> Self {
        let failure_kind = outcome.classify();
        Self {
            success: failure_kind == FailureKind::None,
            exit_code: outcome.exit_code(),
            duration_secs: duration.as_secs_f64(),
            stdout_excerpt: stdout,
            stderr_excerpt: stderr,
            failure_kind,
        }
    }

    fn launcher(message: String) -> Self {
        Self::new(
            ProcessOutcome::SpawnFailed,
            Duration::ZERO,
            String::new(),
            message,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSpec {
    pub width: u32,
    pub height: u32,
    /// Ignored in config files; set per render.
    #[serde(skip)]
    pub output_path: PathBuf,
    pub azimuth: f64,
    pub elevation: f64,
    pub margin: f64,
    /// Narrow-axis field of view; the runner's camera default when unset.
    pub fov: Option<f64>,
    pub lighting: String,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            width: DEFAULT_RENDER_SIZE,
            height: DEFAULT_RENDER_SIZE,
            output_path: PathBuf::new(),
            azimuth: DEFAULT_AZIMUTH_DEG,
            elevation: DEFAULT_ELEVATION_DEG,
            margin: DEFAULT_MARGIN,
            fov: None,
            lighting: LIGHTING_PRESET.into(),
        }
    }
}

impl RenderSpec {
    pub fn at(&self, output_path: impl Into<PathBuf>) -> Self {
        Self {
            output_path: output_path.into(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ExecutorError> {
        let bad = |m: &str| Err(ExecutorError::InvalidRenderSpec(m.into()));
        if self.width == 0 || self.height == 0 {
            return bad("width and height must be positive");
        }
        if !(self.margin >= 1.0) {
            return bad("margin must be at least 1");
        }
        if let Some(fov) = self.fov {
            if !(fov > 0.0 && fov < 180.0) {
                return bad("fov must lie strictly between 0 and 180 degrees");
            }
        }
        if self.output_path.as_os_str().is_empty() {
            return bad("output path is empty");
        }
        Ok(())
    }
}

/// Pose and scene facts the runner records next to every render.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderManifest {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
    pub target: Vec3,
    pub fov: f64,
    pub margin: f64,
    pub bounding_radius: Option<f64>,
    pub empty_scene: bool,
    pub host_version: String,
    #[serde(default)]
    pub width: Option<u32>,
    #[serde(default)]
    pub height: Option<u32>,
    #[serde(default)]
    pub lighting: Option<String>,
}

impl RenderManifest {
    /// Distance the closed-form fit gives for this manifest's inputs.
    pub fn expected_distance(&self) -> Result<f64, String> {
        if self.empty_scene {
            return Ok(EMPTY_SCENE_DISTANCE);
        }
        let radius = self
            .bounding_radius
            .ok_or("non-empty scene without bounding radius")?;
        fit_distance(radius, self.fov, self.margin).map_err(|e| e.to_string())
    }

    /// Checks the runner's pose against the requested angles and the fit rule.
    pub fn check_pose(&self, spec: &RenderSpec) -> Result<(), String> {
        let close = |a: f64, b: f64| (a - b).abs() <= POSE_TOLERANCE;
        if !close(self.azimuth, spec.azimuth) || !close(self.elevation, spec.elevation) {
            return Err(format!(
                "pose ({}, {}) differs from requested ({}, {})",
                self.azimuth, self.elevation, spec.azimuth, spec.elevation
            ));
        }
        if !close(self.margin, spec.margin) {
            return Err(format!(
                "margin {} differs from requested {}",
                self.margin, spec.margin
            ));
        }
        if let Some(fov) = spec.fov {
            if !close(self.fov, fov) {
                return Err(format!("fov {} differs from requested {fov}", self.fov));
            }
        }
        let expected = self.expected_distance()?;
        if !close(self.distance, expected) {
            return Err(format!(
                "distance {} differs from fitted {expected}",
                self.distance
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderArtifact {
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub manifest: RenderManifest,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "message", rename_all = "snake_case")]
pub enum RenderError {
    #[error("render failed: {0}")]
    RenderFailed(String),
    #[error("host exited cleanly but did not write {0}")]
    MissingOutput(String),
}

impl ErrorCode for RenderError {
    fn code(&self) -> &'static str {
        match self {
            Self::RenderFailed(_) => "RenderFailed",
            Self::MissingOutput(_) => "MissingOutput",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HostRun {
    pub execution: ExecutionResult,
    /// `None` when no render was requested or the script failed.
    pub render: Option<Result<RenderArtifact, RenderError>>,
}

#[derive(Debug, Error)]
pub enum ExecutorError {
    #[error("script is empty")]
    EmptyScript,
    #[error("invalid render spec: {0}")]
    InvalidRenderSpec(String),
}

impl ErrorCode for ExecutorError {
    fn code(&self) -> &'static str {
        match self {
            Self::EmptyScript => "EmptyScript",
            Self::InvalidRenderSpec(_) => "InvalidRenderSpec",
        }
    }
}

pub trait ScriptRunner: Send + Sync {
    fn run(&self, script: &str, render: Option<&RenderSpec>) -> Result<HostRun, ExecutorError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutorEnv {
    /// Absolute path, or a name looked up on `PATH`.
    pub host_binary: PathBuf,
    pub runner_path: PathBuf,
    pub timeout_secs: f64,
    /// Per-run scratch directories are created here.
    pub workdir: PathBuf,
    /// Host processes allowed at once.
    pub max_concurrent: usize,
}

impl Default for ExecutorEnv {
    fn default() -> Self {
        Self {
            host_binary: PathBuf::from("blender"),
            runner_path: PathBuf::from("rag3d_runner.py"),
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            workdir: std::env::temp_dir(),
            max_concurrent: 1,
        }
    }
}

impl ExecutorEnv {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.0))
    }
}

pub struct HostExecutor {
    env: ExecutorEnv,
    pool: Semaphore,
}

impl HostExecutor {
    pub fn new(env: ExecutorEnv) -> Self {
        let pool = Semaphore::new(env.max_concurrent);
        Self { env, pool }
    }

    pub fn env(&self) -> &ExecutorEnv {
        &self.env
    }

    fn command(&self, script: &Path, render: Option<(&RenderSpec, &Path)>) -> Command {
        let mut cmd = Command::new(&self.env.host_binary);
        cmd.arg("--background")
            .arg("--python")
            .arg(&self.env.runner_path)
            .arg("--")
            .arg("--script")
            .arg(script);
        if let Some((spec, manifest)) = render {
            cmd.arg("--render")
                .arg(&spec.output_path)
                .arg("--manifest")
                .arg(manifest)
                .args(["--width", &spec.width.to_string()])
                .args(["--height", &spec.height.to_string()])
                .args(["--azimuth", &spec.azimuth.to_string()])
                .args(["--elevation", &spec.elevation.to_string()])
                .args(["--margin", &spec.margin.to_string()]);
            if let Some(fov) = spec.fov {
                cmd.args(["--fov", &fov.to_string()]);
            }
        }
        cmd.stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        // Own process group, so a timeout can take down anything the host spawned.
        cmd.process_group(0);
        cmd
    }

    fn supervise(&self, mut child: Child) -> (ProcessOutcome, Duration, String, String) {
        let started = Instant::now();
        let stdout = child.stdout.take().map(tail_reader);
        let stderr = child.stderr.take().map(tail_reader);
        let deadline = started + self.env.timeout();
        let outcome = loop {
            match child.try_wait() {
                Ok(Some(status)) => break ProcessOutcome::Exited(exit_code(status)),
                Ok(None) if Instant::now() >= deadline => {
                    kill_group(&mut child);
                    break ProcessOutcome::TimedOut;
                }
                Ok(None) => thread::sleep(POLL_INTERVAL),
                Err(e) => {
                    log::error!("lost track of host process: {e}");
                    kill_group(&mut child);
                    break ProcessOutcome::Exited(-1);
                }
            }
        };
        let duration = started.elapsed();
        let join =
            |h: Option<JoinHandle<String>>| h.and_then(|h| h.join().ok()).unwrap_or_default();
        (outcome, duration, join(stdout), join(stderr))
    }
}

fn exit_code(status: ExitStatus) -> i32 {
    status
        .code()
        .or_else(|| status.signal().map(|s| 128 + s))
        .unwrap_or(-1)
}

fn kill_group(child: &mut Child) {
    let pid = child.id() as libc::pid_t;
    // SAFETY: kill(2) on our own child's process group has no memory effects.
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
    let _ = child.kill();
    let _ = child.wait();
}

/// Drains a pipe on its own thread, keeping only the last [`EXCERPT_BYTES`].
fn tail_reader<R: Read + Send + 'static>(mut pipe: R) -> JoinHandle<String> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            match pipe.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    kept.extend_from_slice(&buf[..n]);
                    if kept.len() > 2 * EXCERPT_BYTES {
                        kept.drain(..kept.len() - EXCERPT_BYTES);
                    }
                }
            }
        }
        if kept.len() > EXCERPT_BYTES {
            kept.drain(..kept.len() - EXCERPT_BYTES);
        }
        String::from_utf8_lossy(&kept).into_owned()
    })
}

fn collect_render(spec: &RenderSpec, manifest_path: &Path) -> Result<RenderArtifact, RenderError> {
    if !spec.output_path.is_file() {
        return Err(RenderError::MissingOutput(
            spec.output_path.display().to_string(),
        ));
    }
    let text = fs::read_to_string(manifest_path)
        .map_err(|_| RenderError::MissingOutput(manifest_path.display().to_string()))?;
    let manifest: RenderManifest = serde_json::from_str(&text)
        .map_err(|e| RenderError::RenderFailed(format!("unreadable manifest: {e}")))?;
    manifest
        .check_pose(spec)
        .map_err(RenderError::RenderFailed)?;
    let (width, height) = image::image_dimensions(&spec.output_path)
        .map_err(|e| RenderError::RenderFailed(format!("unreadable render: {e}")))?;
    if (width, height) != (spec.width, spec.height) {
        return Err(RenderError::RenderFailed(format!(
            "render is {width}x{height}, expected {}x{}",
            spec.width, spec.height
        )));
    }
    Ok(RenderArtifact {
        path: spec.output_path.clone(),
        width,
        height,
        manifest,
    })
}

impl ScriptRunner for HostExecutor {
    fn run(&self, script: &str, render: Option<&RenderSpec>) -> Result<HostRun, ExecutorError> {
        if script.trim().is_empty() {
            return Err(ExecutorError::EmptyScript);
        }
        if let Some(spec) = render {
            spec.validate()?;
        }
        let _slot = self.pool.acquire();
        let launcher = |msg: String| {
            Ok(HostRun {
                execution: ExecutionResult::launcher(msg),
                render: None,
            })
        };
        if !self.env.runner_path.is_file() {
            return launcher(format!(
                "runner not found at {}",
                self.env.runner_path.display()
            ));
        }
        let scratch = match fs::create_dir_all(&self.env.workdir).and_then(|_| {
            tempfile::Builder::new()
                .prefix("rag3d-run-")
                .tempdir_in(&self.env.workdir)
        }) {
            Ok(dir) => dir,
            Err(e) => return launcher(format!("cannot create scratch dir: {e}")),
        };
        let script_path = scratch.path().join("script.py");
        if let Err(e) = fs::write(&script_path, script) {
            return launcher(format!("cannot write script: {e}"));
        }
        let manifest_path = scratch.path().join("manifest.json");
        if let Some(spec) = render {
            if let Some(parent) = spec.output_path.parent() {
                if let Err(e) = fs::create_dir_all(parent) {
                    return launcher(format!("cannot create render dir: {e}"));
                }
            }
            // A stale image must not pass for this run's output.
            let _ = fs::remove_file(&spec.output_path);
        }
        let child = match self
            .command(&script_path, render.map(|s| (s, manifest_path.as_path())))
            .spawn()
        {
            Ok(child) => child,
            Err(e) => {
                return launcher(format!(
                    "cannot launch {}: {e}",
                    self.env.host_binary.display()
                ))
            }
        };
        let (outcome, duration, stdout, stderr) = self.supervise(child);
        let execution = ExecutionResult::new(outcome, duration, stdout, stderr);
        let render = match render {
            Some(spec) if execution.success => Some(collect_render(spec, &manifest_path)),
            _ => None,
        };
        Ok(HostRun { execution, render })
    }
}

impl<T: ScriptRunner + ?Sized> ScriptRunner for Arc<T> {
    fn run(&self, script: &str, render: Option<&RenderSpec>) -> Result<HostRun, ExecutorError> {
        (**self).run(script, render)
    }
}
