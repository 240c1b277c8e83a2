use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use url::Url;

use super::{BackendError, GenerationRequest, GenerationResult, GeneratorBackend, Usage};

/// Bearer token. Never printed.
#[derive(Clone)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(token: impl Into<String>) -> Self {
        Self(token.into())
    }

    /// Read the token from environment variable `var`.
    pub fn from_env(var: &str) -> Option<Self> {
        std::env::var(var).ok().filter(|v| !v.is_empty()).map(Self)
    }

    fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(***)")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: Url,
    pub model: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// First retry delay; doubles after each attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    500
}

impl HttpBackendConfig {
    pub fn new(endpoint: Url, model: impl Into<String>) -> Self {
        Self {
            endpoint,
            model: model.into(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            api_key_env: None,
        }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    max_tokens: u32,
    temperature: f32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    prompt_tokens: u32,
    completion_tokens: u32,
}

/// Chat-completions client: one user message in, the first choice's content out.
/// Transport failures, timeouts, 429 and 5xx are retried with exponential backoff.
pub struct HttpBackend {
    id: String,
    config: HttpBackendConfig,
    api_key: Option<ApiKey>,
    client: reqwest::blocking::Client,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.config.endpoint.as_str())
            .field("model", &self.config.model)
            .field("api_key", &self.api_key)
            .finish()
    }
}

impl HttpBackend {
    /// Build from config, resolving the token from the configured environment variable.
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let api_key = config.api_key_env.as_deref().and_then(ApiKey::from_env);
        Self::with_api_key(config, api_key)
    }

    pub fn with_api_key(config: HttpBackendConfig, api_key: Option<ApiKey>) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| BackendError::unavailable(format!("building HTTP client: {e}")))?;
        Ok(Self {
            id: format!("http:{}", config.model),
            config,
            api_key,
            client,
        })
    }

    /// Replace the token with `***` wherever it shows up in text headed for errors or logs.
    fn scrub(&self, text: &str) -> String {
        match &self.api_key {
            Some(key) if !key.expose().is_empty() => text.replace(key.expose(), "***"),
            _ => text.to_string(),
        }
    }

    fn attempt(&self, body: &ChatRequest<'_>, prompt: &str) -> Result<GenerationResult, (BackendError, bool)> {
        let mut builder = self.client.post(self.config.endpoint.clone()).json(body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key.expose());
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                (BackendError::Timeout, true)
            } else {
                // reqwest errors carry the URL but never request headers.
                (BackendError::unavailable(self.scrub(&e.to_string())), true)
            }
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| {
            if e.is_timeout() {
                (BackendError::Timeout, true)
            } else {
                (BackendError::unavailable(self.scrub(&e.to_string())), true)
            }
        })?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err((
                BackendError::unavailable(format!("status {}: {}", status.as_u16(), self.scrub(&text))),
                true,
            ));
        }
        if !status.is_success() {
            return Err((
                BackendError::Rejected {
                    status: Some(status.as_u16()),
                    body: self.scrub(&text),
                },
                false,
            ));
        }
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| {
            (
                BackendError::Rejected {
                    status: Some(status.as_u16()),
                    body: format!("malformed completion JSON: {e}"),
                },
                false,
            )
        })?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| {
                (
                    BackendError::Rejected {
                        status: Some(status.as_u16()),
                        body: "completion has no message content".to_string(),
                    },
                    false,
                )
            })?;
        let usage = match parsed.usage {
            Some(u) => Usage {
                prompt_tokens: u.prompt_tokens,
                output_tokens: u.completion_tokens,
            },
            None => Usage::estimate(prompt, &content),
        };
        Ok(GenerationResult {
            text: content,
            usage,
            backend_id: self.id.clone(),
        })
    }
}

impl GeneratorBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage {
                role: "user",
                content: &request.prompt,
            }],
            max_tokens: request.max_output_tokens,
            temperature: request.temperature,
        };
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut attempt = 0;
        loop {
            match self.attempt(&body, &request.prompt) {
                Ok(result) => return Ok(result),
                Err((err, retryable)) => {
                    if !retryable || attempt >= self.config.max_retries {
                        tracing::warn!(backend = %self.id, attempt, error = %err, "generation failed");
                        return Err(err);
                    }
                    tracing::debug!(backend = %self.id, attempt, error = %err, "retrying generation");
                    std::thread::sleep(delay);
                    delay = delay.saturating_mul(2);
                    attempt += 1;
                }
            }
        }
    }
}
