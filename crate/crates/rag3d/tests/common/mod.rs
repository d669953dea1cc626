#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use rag3d::core::camera::{fit_distance, DEFAULT_FOV_DEG};
use rag3d::core::prompt::PromptTemplate;
use rag3d::corpus_io::{load_corpus, sample};
use rag3d::embedder::{Embedder, LocalEmbedder};
use rag3d::executor::{
    ExecutionResult, ExecutorEnv, ExecutorError, FailureKind, HostRun, RenderArtifact,
    RenderManifest, RenderSpec, ScriptRunner,
};
use rag3d::gateway::{
    AttemptError, ChatMessage, ChatTransport, Completion, Gateway, ProviderConfig, Registry,
};
use rag3d::retrieval::IndexRetriever;
use rag3d::session::Pipeline;
use rag3d::store::{build_index, SharedIndex};

pub const EMBED_DIM: usize = 256;

pub fn stub_host() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/stub_host.py")
}

/// The stub doubles as host binary and runner script.
pub fn stub_env(workdir: &Path, timeout_secs: f64) -> ExecutorEnv {
    ExecutorEnv {
        host_binary: stub_host(),
        runner_path: stub_host(),
        timeout_secs,
        workdir: workdir.to_path_buf(),
        max_concurrent: 4,
    }
}

pub fn sample_corpus(dir: &Path) -> PathBuf {
    let root = dir.join("corpus");
    sample::init(&root).unwrap();
    root
}

pub fn fenced(script: &str) -> String {
    format!("Sure.\n\n```python\n{script}```\n")
}

/// Chat transport backed by a closure over the outgoing messages.
pub struct FnTransport<F>(pub F);

impl<F> ChatTransport for FnTransport<F>
where
    F: Fn(&[ChatMessage]) -> Result<Completion, AttemptError> + Send + Sync,
{
    fn send(
        &self,
        _: &ProviderConfig,
        _: Option<&str>,
        messages: &[ChatMessage],
        _: f64,
    ) -> Result<Completion, AttemptError> {
        (self.0)(messages)
    }
}

pub fn reply(content: impl Into<String>) -> Result<Completion, AttemptError> {
    Ok(Completion {
        content: content.into(),
        truncated: false,
    })
}

pub fn mock_gateway<F>(f: F) -> Gateway
where
    F: Fn(&[ChatMessage]) -> Result<Completion, AttemptError> + Send + Sync + 'static,
{
    Gateway::new(Registry::default()).with_mock(Arc::new(FnTransport(f)))
}

/// In-process executor: scripts containing `raise` fail, everything else
/// succeeds and, when asked, writes a placeholder image with a manifest
/// framed around a unit sphere at the origin.
#[derive(Default)]
pub struct FakeRunner {
    pub scripts: Mutex<Vec<String>>,
}

impl ScriptRunner for FakeRunner {
    fn run(&self, script: &str, render: Option<&RenderSpec>) -> Result<HostRun, ExecutorError> {
        self.scripts.lock().unwrap().push(script.to_owned());
        let failed = script.contains("raise");
        let execution = ExecutionResult {
            success: !failed,
            exit_code: i32::from(failed),
            duration_secs: 0.0,
            stdout_excerpt: String::new(),
            stderr_excerpt: if failed {
                "RuntimeError: scripted failure\n".into()
            } else {
                String::new()
            },
            failure_kind: if failed {
                FailureKind::ScriptError
            } else {
                FailureKind::None
            },
        };
        let render = match render {
            Some(spec) if !failed => {
                std::fs::write(
                    &spec.output_path,
                    sample::placeholder_png("fake", spec.width),
                )
                .unwrap();
                let fov = spec.fov.unwrap_or(DEFAULT_FOV_DEG);
                let manifest = RenderManifest {
                    azimuth: spec.azimuth,
                    elevation: spec.elevation,
                    distance: fit_distance(1.0, fov, spec.margin).unwrap(),
                    target: [0.0; 3],
                    fov,
                    margin: spec.margin,
                    bounding_radius: Some(1.0),
                    empty_scene: false,
                    host_version: "fake".into(),
                    width: Some(spec.width),
                    height: Some(spec.height),
                    lighting: Some(spec.lighting.clone()),
                };
                Some(Ok(RenderArtifact {
                    path: spec.output_path.clone(),
                    width: spec.width,
                    height: spec.height,
                    manifest,
                }))
            }
            _ => None,
        };
        Ok(HostRun { execution, render })
    }
}

pub fn retriever_for(corpus_root: &Path) -> Arc<IndexRetriever> {
    let corpus = Arc::new(load_corpus(corpus_root, false).unwrap());
    let embedder: Arc<dyn Embedder> = Arc::new(LocalEmbedder::new(EMBED_DIM));
    let index = SharedIndex::new(build_index(&corpus.corpus, embedder.as_ref()).unwrap());
    Arc::new(IndexRetriever {
        embedder,
        index,
        corpus,
    })
}

pub fn pipeline(corpus_root: &Path, gateway: Gateway, runner: Arc<dyn ScriptRunner>) -> Pipeline {
    Pipeline {
        retriever: retriever_for(corpus_root),
        gateway: Arc::new(gateway),
        runner,
        template: PromptTemplate::default(),
        render: RenderSpec {
            width: 8,
            height: 8,
            ..RenderSpec::default()
        },
    }
}

#[derive(Debug, Clone)]
pub struct Recorded {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Recorded {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.body).unwrap()
    }
}

pub struct StubReply {
    pub status: u16,
    pub body: String,
    pub delay: Duration,
}

impl StubReply {
    pub fn json(status: u16, body: serde_json::Value) -> Self {
        Self {
            status,
            body: body.to_string(),
            delay: Duration::ZERO,
        }
    }
}

/// Minimal HTTP/1.1 server: one request per connection, replies chosen by a
/// handler that also sees how many requests came before.
pub struct HttpStub {
    pub addr: SocketAddr,
    pub requests: Arc<Mutex<Vec<Recorded>>>,
}

impl HttpStub {
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(usize, &Recorded) -> StubReply + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let requests = Arc::new(Mutex::new(Vec::new()));
        let handler = Arc::new(handler);
        let log = requests.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (log, handler) = (log.clone(), handler.clone());
                thread::spawn(move || serve_one(stream, &log, handler.as_ref()));
            }
        });
        Self { addr, requests }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub fn recorded(&self) -> Vec<Recorded> {
        self.requests.lock().unwrap().clone()
    }
}

fn serve_one(
    stream: TcpStream,
    log: &Mutex<Vec<Recorded>>,
    handler: &(dyn Fn(usize, &Recorded) -> StubReply + Send + Sync),
) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_owned();
    let path = parts.next().unwrap_or_default().to_owned();
    let mut headers = Vec::new();
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h).unwrap_or(0) == 0 || h.trim().is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            headers.push((k.trim().to_owned(), v.trim().to_owned()));
        }
    }
    let len = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.parse::<usize>().ok())
        .unwrap_or(0);
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok();
    let req = Recorded {
        method,
        path,
        headers,
        body: String::from_utf8_lossy(&body).into_owned(),
    };
    let n = {
        let mut log = log.lock().unwrap();
        log.push(req.clone());
        log.len() - 1
    };
    let reply = handler(n, &req);
    thread::sleep(reply.delay);
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        reply.status,
        reply.body.len(),
        reply.body
    );
    let _ = stream.flush();
}

pub struct FixedScorer(pub f64);

impl rag3d::evaluation::AlignmentScorer for FixedScorer {
    fn score(
        &self,
        _: &str,
        _: &[u8],
    ) -> Result<rag3d::evaluation::AlignmentScore, rag3d::evaluation::ScorerError> {
        Ok(rag3d::evaluation::AlignmentScore {
            score: self.0,
            scorer_id: "fixed".into(),
        })
    }
}

/// Service app over the sample corpus with mocked provider, executor and
/// scorer. Everything lives under `dir`.
pub fn test_app(dir: &Path, token: Option<&str>) -> rag3d::config::App {
    use rag3d::config::{App, Overrides, ServiceConfig};
    let config = ServiceConfig {
        corpus_root: sample_corpus(dir),
        index_snapshot: dir.join("index.snap"),
        sessions_root: dir.join("sessions"),
        reports_root: dir.join("reports"),
        token: token.map(Into::into),
        embedder: rag3d::embedder::EmbedderConfig::local(EMBED_DIM),
        render: RenderSpec {
            width: 8,
            height: 8,
            ..RenderSpec::default()
        },
        ..ServiceConfig::default()
    };
    let overrides = Overrides {
        gateway: Some(mock_gateway(|_| {
            reply(fenced("import bpy\nbpy.ops.mesh.primitive_cube_add()\n"))
        })),
        runner: Some(Arc::new(FakeRunner::default())),
        scorer: Some(Some(Arc::new(FixedScorer(0.5)))),
    };
    App::build_with(config, overrides).unwrap()
}

pub async fn call(
    router: &axum::Router,
    method: &str,
    uri: &str,
    body: Option<serde_json::Value>,
    token: Option<&str>,
) -> (u16, serde_json::Value) {
    use http_body_util::BodyExt;
    use tower::ServiceExt;
    let mut req = axum::http::Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            axum::body::Body::from(v.to_string())
        }
        None => axum::body::Body::empty(),
    };
    let resp = router
        .clone()
        .oneshot(req.body(body).unwrap())
        .await
        .unwrap();
    let status = resp.status().as_u16();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null);
    (status, value)
}

/// Polls a report until it leaves the running state.
pub async fn wait_for_report(
    router: &axum::Router,
    id: &str,
    token: Option<&str>,
) -> serde_json::Value {
    for _ in 0..500 {
        let (status, body) = call(router, "GET", &format!("/reports/{id}"), None, token).await;
        assert_eq!(status, 200);
        if body["status"] != "running" {
            return body;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("report {id} never finished");
}

pub const INDOOR: [&str; 25] = [
    "Armchair",
    "Bed",
    "Bookshelf",
    "Cabinet (Kitchen)",
    "Candle",
    "Chair",
    "Door",
    "Frame",
    "Fridge",
    "Glass",
    "Lamp",
    "Living Room Table",
    "Microwave",
    "Mirror",
    "Office Lamp",
    "Pillow",
    "Plant",
    "Plate",
    "Pot",
    "Rug",
    "Sofa",
    "Table",
    "Trash Can",
    "Wardrobe",
    "Window",
];

pub const OUTDOOR: [&str; 25] = [
    "Ball",
    "Bell Tower",
    "Bench",
    "Bin",
    "Bush",
    "Cactus",
    "Car",
    "Condominium",
    "Daisy",
    "Fountain",
    "Gate",
    "Gazebo",
    "Grass",
    "Hedge",
    "Humanoid Statue",
    "Mountain",
    "Rock",
    "Sea Umbrella",
    "Shrub",
    "Shrub Leaf",
    "Skyscraper",
    "Stop Signal",
    "Stoplight",
    "Street Lamp",
    "Tree",
];

/// 50 categories x 10 variations with code lengths that vary per entry.
pub fn full_shape_entries() -> Vec<rag3d::corpus_io::NewEntry> {
    use rag3d::core::corpus::Setting;
    use rag3d::corpus_io::{ManifestRecord, NewEntry};
    let mut out = Vec::new();
    for (setting, names) in [(Setting::Indoor, INDOOR), (Setting::Outdoor, OUTDOOR)] {
        for (c, name) in names.iter().enumerate() {
            let slug: String = name
                .chars()
                .filter(|ch| ch.is_ascii_alphanumeric() || *ch == ' ')
                .collect::<String>()
                .to_lowercase()
                .replace(' ', "_");
            for v in 1..=10u32 {
                let id = format!("{slug}-{v:02}");
                let padding = "# detail\n".repeat(c + v as usize);
                out.push(NewEntry {
                    record: ManifestRecord {
                        id: id.clone(),
                        category: (*name).into(),
                        setting,
                        variation: v,
                        description: format!("{name} design variation {v}, {setting:?} object"),
                        code_path: format!("code/{id}.py"),
                        image_path: format!("images/{id}.png"),
                    },
                    code: format!("import bpy\n{padding}bpy.ops.mesh.primitive_cube_add()\n"),
                    image_png: vec![0x89, b'P', b'N', b'G'],
                });
            }
        }
    }
    out
}
