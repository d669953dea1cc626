mod common;

use std::sync::{Mutex, Once};
use std::time::{Duration, Instant};

use rag3d::gateway::{
    AdapterKind, ChatMessage, ChatRequest, Gateway, GatewayError, ProviderConfig, Registry,
};
use serde_json::json;

use common::{HttpStub, StubReply};

static LOGS: Mutex<Vec<String>> = Mutex::new(Vec::new());

struct Capture;

impl log::Log for Capture {
    fn enabled(&self, _: &log::Metadata) -> bool {
        true
    }
    fn log(&self, record: &log::Record) {
        LOGS.lock().unwrap().push(record.args().to_string());
    }
    fn flush(&self) {}
}

fn capture_logs() {
    static INIT: Once = Once::new();
    INIT.call_once(|| {
        log::set_boxed_logger(Box::new(Capture)).unwrap();
        log::set_max_level(log::LevelFilter::Trace);
    });
}

fn provider(
    id: &str,
    adapter: AdapterKind,
    endpoint: String,
    key_env: Option<&str>,
) -> ProviderConfig {
    ProviderConfig {
        provider_id: id.into(),
        adapter,
        endpoint,
        model_name: "test-model".into(),
        api_key_env: key_env.map(Into::into),
        timeout_secs: 5.0,
        max_retries: 2,
        backoff_ms: 10,
        ..ProviderConfig::mock()
    }
}

fn gateway(cfg: ProviderConfig) -> Gateway {
    Gateway::new(Registry::from_configs(vec![cfg]).unwrap())
}

fn request(id: &str) -> ChatRequest {
    ChatRequest {
        provider_id: id.into(),
        messages: vec![
            ChatMessage::system("be brief"),
            ChatMessage::user("make a chair"),
        ],
        temperature: None,
    }
}

#[test]
fn openai_wire_shape() {
    std::env::set_var("RAG3D_TEST_OPENAI_KEY", "sk-openai-123");
    let stub = HttpStub::start(|_, _| {
        StubReply::json(
            200,
            json!({"choices": [{"message": {"content": "```python\nx=1\n```"}, "finish_reason": "stop"}]}),
        )
    });
    let gw = gateway(provider(
        "gpt",
        AdapterKind::OpenAi,
        stub.url("/v1/chat/completions"),
        Some("RAG3D_TEST_OPENAI_KEY"),
    ));
    let resp = gw.complete(&request("gpt")).unwrap();
    assert_eq!(resp.content, "```python\nx=1\n```");
    assert_eq!(resp.attempts, 1);
    assert!(!resp.truncated);
    let reqs = stub.recorded();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].method, "POST");
    assert_eq!(reqs[0].path, "/v1/chat/completions");
    assert_eq!(
        reqs[0].header("authorization"),
        Some("Bearer sk-openai-123")
    );
    let body = reqs[0].json();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "make a chair");
    assert_eq!(body["temperature"], 0.2);
}

#[test]
fn anthropic_wire_shape() {
    std::env::set_var("RAG3D_TEST_ANTHROPIC_KEY", "sk-ant-456");
    let stub = HttpStub::start(|_, _| {
        StubReply::json(
            200,
            json!({"content": [{"type": "text", "text": "a"}, {"type": "text", "text": "b"}], "stop_reason": "max_tokens"}),
        )
    });
    let gw = gateway(provider(
        "claude",
        AdapterKind::Anthropic,
        stub.url("/v1/messages"),
        Some("RAG3D_TEST_ANTHROPIC_KEY"),
    ));
    let resp = gw.complete(&request("claude")).unwrap();
    assert_eq!(resp.content, "ab");
    assert!(resp.truncated);
    let req = &stub.recorded()[0];
    assert_eq!(req.header("x-api-key"), Some("sk-ant-456"));
    assert_eq!(req.header("anthropic-version"), Some("2023-06-01"));
    let body = req.json();
    assert_eq!(body["system"], "be brief");
    assert_eq!(body["messages"].as_array().unwrap().len(), 1);
    assert_eq!(body["messages"][0]["role"], "user");
}

#[test]
fn gemini_wire_shape() {
    std::env::set_var("RAG3D_TEST_GEMINI_KEY", "gm-789");
    let stub = HttpStub::start(|_, _| {
        StubReply::json(
            200,
            json!({"candidates": [{"content": {"parts": [{"text": "ok"}]}, "finishReason": "STOP"}]}),
        )
    });
    let gw = gateway(provider(
        "gemini",
        AdapterKind::Gemini,
        stub.url("/v1beta/models/{model}:generateContent"),
        Some("RAG3D_TEST_GEMINI_KEY"),
    ));
    let resp = gw.complete(&request("gemini")).unwrap();
    assert_eq!(resp.content, "ok");
    let req = &stub.recorded()[0];
    assert_eq!(req.path, "/v1beta/models/test-model:generateContent");
    assert!(!req.path.contains("gm-789"));
    assert_eq!(req.header("x-goog-api-key"), Some("gm-789"));
    let body = req.json();
    assert_eq!(body["systemInstruction"]["parts"][0]["text"], "be brief");
    assert_eq!(body["contents"][0]["role"], "user");
}

#[test]
fn transient_failures_are_retried() {
    let stub = HttpStub::start(|n, _| {
        if n < 2 {
            StubReply::json(503, json!({"error": "busy"}))
        } else {
            StubReply::json(200, json!({"choices": [{"message": {"content": "done"}}]}))
        }
    });
    let gw = gateway(provider(
        "local",
        AdapterKind::OpenAi,
        stub.url("/chat"),
        None,
    ));
    let resp = gw.complete(&request("local")).unwrap();
    assert_eq!(resp.attempts, 3);
    assert_eq!(resp.content, "done");
    assert_eq!(stub.recorded().len(), 3);
    assert!(stub.recorded()[0].header("authorization").is_none());
}

#[test]
fn retries_run_out() {
    let stub = HttpStub::start(|_, _| StubReply::json(429, json!({"error": "slow down"})));
    let gw = gateway(provider(
        "local",
        AdapterKind::OpenAi,
        stub.url("/chat"),
        None,
    ));
    match gw.complete(&request("local")) {
        Err(GatewayError::RetriesExhausted { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(stub.recorded().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let stub = HttpStub::start(|_, _| StubReply::json(400, json!({"error": "bad request"})));
    let gw = gateway(provider(
        "local",
        AdapterKind::OpenAi,
        stub.url("/chat"),
        None,
    ));
    match gw.complete(&request("local")) {
        Err(GatewayError::ProviderError { status, body, .. }) => {
            assert_eq!(status, Some(400));
            assert!(body.contains("bad request"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(stub.recorded().len(), 1);
}

#[test]
fn malformed_payload_is_a_provider_error() {
    let stub = HttpStub::start(|_, _| StubReply::json(200, json!({"unexpected": true})));
    let gw = gateway(provider(
        "local",
        AdapterKind::OpenAi,
        stub.url("/chat"),
        None,
    ));
    assert!(matches!(
        gw.complete(&request("local")),
        Err(GatewayError::ProviderError { .. })
    ));
}

#[test]
fn slow_backend_times_out_within_bound() {
    let stub = HttpStub::start(|_, _| StubReply {
        status: 200,
        body: "{}".into(),
        delay: Duration::from_secs(3),
    });
    let cfg = ProviderConfig {
        timeout_secs: 0.3,
        max_retries: 1,
        backoff_ms: 50,
        ..provider("slow", AdapterKind::OpenAi, stub.url("/chat"), None)
    };
    let started = Instant::now();
    match gateway(cfg).complete(&request("slow")) {
        Err(GatewayError::Timeout { attempts, .. }) => assert_eq!(attempts, 2),
        other => panic!("unexpected {other:?}"),
    }
    // Two 0.3 s attempts plus one 50 ms backoff, with slack for scheduling.
    assert!(
        started.elapsed() < Duration::from_millis(2000),
        "{:?}",
        started.elapsed()
    );
}

#[test]
fn credentials_never_reach_errors_or_logs() {
    capture_logs();
    const KEY: &str = "sk-very-secret-0000";
    std::env::set_var("RAG3D_TEST_LEAKY_KEY", KEY);
    let stub = HttpStub::start(|n, req| {
        let echoed = req.header("authorization").unwrap_or_default().to_owned();
        let status = if n == 0 { 500 } else { 401 };
        StubReply::json(status, json!({"error": format!("invalid token {echoed}")}))
    });
    let gw = gateway(provider(
        "leaky",
        AdapterKind::OpenAi,
        stub.url("/chat"),
        Some("RAG3D_TEST_LEAKY_KEY"),
    ));
    let err = gw.complete(&request("leaky")).unwrap_err();
    assert_eq!(stub.recorded().len(), 2);
    let shown = format!("{err} {err:?}");
    assert!(!shown.contains(KEY), "{shown}");
    assert!(shown.contains("[redacted]"));
    let logs = LOGS.lock().unwrap().join("\n");
    assert!(logs.contains("leaky"), "expected gateway log lines");
    assert!(!logs.contains(KEY), "{logs}");
}

#[test]
fn missing_credentials_fail_before_any_request() {
    let stub = HttpStub::start(|_, _| StubReply::json(200, json!({})));
    let gw = gateway(provider(
        "nokey",
        AdapterKind::OpenAi,
        stub.url("/chat"),
        Some("RAG3D_TEST_UNSET_KEY_XYZ"),
    ));
    assert!(matches!(
        gw.check_credentials("nokey"),
        Err(GatewayError::MissingCredentials { .. })
    ));
    match gw.complete(&request("nokey")) {
        Err(GatewayError::MissingCredentials { env_var, .. }) => {
            assert_eq!(env_var, "RAG3D_TEST_UNSET_KEY_XYZ")
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(stub.recorded().is_empty());
}

#[test]
fn unknown_provider_is_rejected() {
    let gw = Gateway::new(Registry::default());
    assert!(matches!(
        gw.complete(&request("nope")),
        Err(GatewayError::UnknownProvider(_))
    ));
}

#[test]
fn registry_file_round_trip() {
    let toml = r#"
[[provider]]
provider_id = "gpt-4o"
adapter = "openai"
endpoint = "https://api.openai.com/v1/chat/completions"
model_name = "gpt-4o"
api_key_env = "OPENAI_API_KEY"

[[provider]]
provider_id = "mistral"
adapter = "openai"
endpoint = "https://api.mistral.ai/v1/chat/completions"
model_name = "mistral-large-latest"
api_key_env = "MISTRAL_API_KEY"
max_in_flight = 2
"#;
    let reg = Registry::from_toml(toml).unwrap();
    assert_eq!(reg.ids(), ["gpt-4o", "mistral", "mock"]);
    let m = reg.get("mistral").unwrap();
    assert_eq!(m.max_in_flight, 2);
    assert_eq!(m.max_retries, 2);
    assert_eq!(m.temperature, 0.2);
}
