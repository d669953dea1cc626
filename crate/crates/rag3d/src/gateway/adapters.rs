//! Per-backend request builders and response parsers over one HTTP transport.

use std::time::Duration;

use serde_json::{json, Value};

use super::{
    AdapterKind, AttemptError, ChatMessage, ChatTransport, Completion, ProviderConfig, Role,
};

const ANTHROPIC_VERSION: &str = "2023-06-01";

pub(crate) struct HttpCall {
    pub url: String,
    pub headers: Vec<(&'static str, String)>,
    pub body: Value,
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    }
}

/// System messages joined, in order, for backends that take them separately.
fn split_system(messages: &[ChatMessage]) -> (Option<String>, Vec<&ChatMessage>) {
    let system: Vec<&str> = messages
        .iter()
        .filter(|m| m.role == Role::System)
        .map(|m| m.content.as_str())
        .collect();
    let rest = messages.iter().filter(|m| m.role != Role::System).collect();
    let system = (!system.is_empty()).then(|| system.join("\n\n"));
    (system, rest)
}

pub(crate) fn build_call(
    cfg: &ProviderConfig,
    api_key: Option<&str>,
    messages: &[ChatMessage],
    temperature: f64,
) -> HttpCall {
    let mut headers = Vec::new();
    match cfg.adapter {
        AdapterKind::OpenAi | AdapterKind::Mock => {
            if let Some(key) = api_key {
                headers.push(("Authorization", format!("Bearer {key}")));
            }
            let msgs: Vec<Value> = messages
                .iter()
                .map(|m| json!({"role": role_name(m.role), "content": m.content}))
                .collect();
            HttpCall {
                url: cfg.endpoint.clone(),
                headers,
                body: json!({
                    "model": cfg.model_name,
                    "messages": msgs,
                    "temperature": temperature,
                    "max_tokens": cfg.max_output,
                }),
            }
        }
        AdapterKind::Anthropic => {
            if let Some(key) = api_key {
                headers.push(("x-api-key", key.to_owned()));
            }
            headers.push(("anthropic-version", ANTHROPIC_VERSION.to_owned()));
            let (system, rest) = split_system(messages);
            let msgs: Vec<Value> = rest
                .iter()
                .map(|m| json!({"role": role_name(m.role), "content": m.content}))
                .collect();
            let mut body = json!({
                "model": cfg.model_name,
                "messages": msgs,
                "temperature": temperature,
                "max_tokens": cfg.max_output,
            });
            if let Some(system) = system {
                body["system"] = Value::String(system);
            }
            HttpCall {
                url: cfg.endpoint.clone(),
                headers,
                body,
            }
        }
        AdapterKind::Gemini => {
            // Key travels in a header so it never shows up in a URL.
            if let Some(key) = api_key {
                headers.push(("x-goog-api-key", key.to_owned()));
            }
            let (system, rest) = split_system(messages);
            let contents: Vec<Value> = rest
                .iter()
                .map(|m| {
                    let role = if m.role == Role::Assistant {
                        "model"
                    } else {
                        "user"
                    };
                    json!({"role": role, "parts": [{"text": m.content}]})
                })
                .collect();
            let mut body = json!({
                "contents": contents,
                "generationConfig": {"temperature": temperature, "maxOutputTokens": cfg.max_output},
            });
            if let Some(system) = system {
                body["systemInstruction"] = json!({"parts": [{"text": system}]});
            }
            HttpCall {
                url: cfg.endpoint.replace("{model}", &cfg.model_name),
                headers,
                body,
            }
        }
    }
}

pub(crate) fn parse_completion(kind: AdapterKind, body: &Value) -> Option<Completion> {
    match kind {
        AdapterKind::OpenAi | AdapterKind::Mock => {
            let choice = body.get("choices")?.get(0)?;
            let content = choice.get("message")?.get("content")?.as_str()?.to_owned();
            let truncated = choice.get("finish_reason").and_then(Value::as_str) == Some("length");
            Some(Completion { content, truncated })
        }
        AdapterKind::Anthropic => {
            let parts = body.get("content")?.as_array()?;
            let content: String = parts
                .iter()
                .filter(|p| p.get("type").and_then(Value::as_str) == Some("text"))
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect();
            let truncated = body.get("stop_reason").and_then(Value::as_str) == Some("max_tokens");
            Some(Completion { content, truncated })
        }
        AdapterKind::Gemini => {
            let candidate = body.get("candidates")?.get(0)?;
            let parts = candidate.get("content")?.get("parts")?.as_array()?;
            let content: String = parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect();
            let truncated =
                candidate.get("finishReason").and_then(Value::as_str) == Some("MAX_TOKENS");
            Some(Completion { content, truncated })
        }
    }
}

/// Blocking HTTP transport used for every non-mock adapter.
#[derive(Debug, Default, Clone, Copy)]
pub struct HttpTransport;

impl ChatTransport for HttpTransport {
    fn send(
        &self,
        cfg: &ProviderConfig,
        api_key: Option<&str>,
        messages: &[ChatMessage],
        temperature: f64,
    ) -> Result<Completion, AttemptError> {
        let call = build_call(cfg, api_key, messages, temperature);
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent
            .post(&call.url)
            .header("Content-Type", "application/json");
        for (name, value) in &call.headers {
            req = req.header(*name, value);
        }
        let mut resp = req.send_json(&call.body).map_err(transport_error)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport_error)?;
        if status == 408 || status == 429 || status >= 500 {
            return Err(AttemptError::Transient(format!("status {status}: {text}")));
        }
        if !(200..300).contains(&status) {
            return Err(AttemptError::Fatal {
                status: Some(status),
                body: text,
            });
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| AttemptError::Fatal {
            status: Some(status),
            body: format!("response is not JSON ({e}): {text}"),
        })?;
        parse_completion(cfg.adapter, &value).ok_or_else(|| AttemptError::Fatal {
            status: Some(status),
            body: format!("unexpected response shape: {text}"),
        })
    }
}

fn transport_error(e: ureq::Error) -> AttemptError {
    match e {
        ureq::Error::Timeout(_) => AttemptError::Timeout,
        other => AttemptError::Transient(other.to_string()),
    }
}
