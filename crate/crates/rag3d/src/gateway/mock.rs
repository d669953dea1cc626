use super::{AttemptError, ChatMessage, ChatTransport, Completion, ProviderConfig};

/// Script the mock provider answers with when no fixed reply is configured.
pub const DEFAULT_MOCK_SCRIPT: &str =
    "import bpy\n\nbpy.ops.mesh.primitive_cube_add(size=1.0, location=(0.0, 0.0, 0.5))\n";

/// In-process stand-in for a model backend. Replies with the provider's
/// `mock_response` if set, otherwise a fenced cube script.
#[derive(Debug, Default, Clone)]
pub struct MockTransport;

impl ChatTransport for MockTransport {
    fn send(
        &self,
        provider: &ProviderConfig,
        _api_key: Option<&str>,
        _messages: &[ChatMessage],
        _temperature: f64,
    ) -> Result<Completion, AttemptError> {
        let content = match &provider.mock_response {
            Some(text) => text.clone(),
            None => format!("Here is the script:\n\n```python\n{DEFAULT_MOCK_SCRIPT}```\n"),
        };
        Ok(Completion {
            content,
            truncated: false,
        })
    }
}
