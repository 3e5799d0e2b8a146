//! Minimal chat-completion client used by the LLM extractor and judge.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{debug, warn};

use crate::abstraction::ServiceError;
use crate::error::{Error, Result};

/// Bearer token source.
pub const TOKEN_ENV: &str = "FAMAS_LLM_TOKEN";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSettings {
    pub base_url: String,
    pub endpoint_path: String,
    pub model: String,
    pub timeout_secs: u64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            endpoint_path: "/v1/chat/completions".into(),
            model: "qwen2.5-72b-instruct".into(),
            timeout_secs: 120,
        }
    }
}

impl LlmSettings {
    pub fn url(&self) -> String {
        format!(
            "{}/{}",
            self.base_url.trim_end_matches('/'),
            self.endpoint_path.trim_start_matches('/')
        )
    }
}

/// Retries after the first attempt, with delays doubling from
/// `initial_backoff` (1 s, 2 s, 4 s by default).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            retries: 0,
            initial_backoff: Duration::ZERO,
        }
    }

    pub fn delays(&self) -> impl Iterator<Item = Duration> + '_ {
        (0..self.retries).map(|i| self.initial_backoff * 2u32.saturating_pow(i))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

pub struct ChatClient {
    settings: LlmSettings,
    token: Option<String>,
    retry: RetryPolicy,
    http: reqwest::blocking::Client,
}

impl std::fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatClient")
            .field("settings", &self.settings)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .field("retry", &self.retry)
            .finish()
    }
}

enum Attempt {
    Retryable(String),
    Fatal(String),
}

impl ChatClient {
    pub fn new(settings: LlmSettings, token: Option<String>, retry: RetryPolicy) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(settings.timeout_secs.max(1)))
            .build()
            .map_err(|e| Error::InvalidParameter(format!("http client: {e}")))?;
        Ok(Self {
            settings,
            token,
            retry,
            http,
        })
    }

    /// Reads the bearer token from [`TOKEN_ENV`] when set.
    pub fn from_env(settings: LlmSettings, retry: RetryPolicy) -> Result<Self> {
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Self::new(settings, token, retry)
    }

    pub fn settings(&self) -> &LlmSettings {
        &self.settings
    }

    /// Sends one temperature-0 completion request and returns the text of
    /// the first choice.
    pub fn complete(&self, messages: &[ChatMessage]) -> std::result::Result<String, ServiceError> {
        let mut delays = self.retry.delays();
        loop {
            match self.attempt(messages) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(msg)) => return Err(ServiceError(msg)),
                Err(Attempt::Retryable(msg)) => match delays.next() {
                    Some(d) => {
                        warn!(error = %msg, delay_ms = d.as_millis() as u64, "retrying completion request");
                        std::thread::sleep(d);
                    }
                    None => {
                        return Err(ServiceError(format!(
                            "giving up after {} attempt(s): {msg}",
                            self.retry.retries + 1
                        )))
                    }
                },
            }
        }
    }

    fn attempt(&self, messages: &[ChatMessage]) -> std::result::Result<String, Attempt> {
        let body = ChatRequest {
            model: &self.settings.model,
            messages,
            temperature: 0.0,
        };
        let mut req = self.http.post(self.settings.url()).json(&body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| Attempt::Retryable(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retryable(format!("server answered {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(format!("server answered {status}")));
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| Attempt::Fatal(format!("unreadable completion body: {e}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Attempt::Fatal("completion has no content".into()))?;
        debug!(chars = text.len(), "completion received");
        Ok(text)
    }
}

/// A versioned prompt with `{{name}}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub text: String,
}

impl PromptTemplate {
    pub fn builtin_extract() -> Self {
        Self {
            name: "extract_prompt_v1".into(),
            text: include_str!("../assets/extract_prompt_v1.txt").into(),
        }
    }

    pub fn builtin_judge() -> Self {
        Self {
            name: "judge_prompt_v1".into(),
            text: include_str!("../assets/judge_prompt_v1.txt").into(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".into());
        Ok(Self { name, text })
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))
    }

    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = self.text.clone();
        for (key, value) in vars {
            out = out.replace(&format!("{{{{{key}}}}}"), value);
        }
        out
    }

    pub fn fingerprint(&self) -> String {
        format!("{} sha256={}", self.name, self.sha256())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_backoff_doubles() {
        let d: Vec<Duration> = RetryPolicy::default().delays().collect();
        assert_eq!(d, vec![Duration::from_secs(1), Duration::from_secs(2), Duration::from_secs(4)]);
    }

    #[test]
    fn url_joins_cleanly() {
        let s = LlmSettings {
            base_url: "http://h:1/".into(),
            endpoint_path: "/v1/chat/completions".into(),
            ..Default::default()
        };
        assert_eq!(s.url(), "http://h:1/v1/chat/completions");
    }

    #[test]
    fn templates_render_placeholders() {
        let t = PromptTemplate {
            name: "t".into(),
            text: "a={{a}} b={{b}} a={{a}}".into(),
        };
        assert_eq!(t.render(&[("a", "1"), ("b", "2")]), "a=1 b=2 a=1");
        assert_eq!(t.sha256().len(), 64);
    }

    #[test]
    fn builtin_templates_mention_their_placeholders() {
        assert!(PromptTemplate::builtin_extract().text.contains("{{records}}"));
        assert!(PromptTemplate::builtin_judge().text.contains("{{action_b}}"));
    }

    #[test]
    fn debug_hides_token() {
        let c = ChatClient::new(LlmSettings::default(), Some("s3cret".into()), RetryPolicy::none()).unwrap();
        assert!(!format!("{c:?}").contains("s3cret"));
    }
}
