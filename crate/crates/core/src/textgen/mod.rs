//! The language-model boundary.
//!
//! Every generator-backed pipeline step renders a [`PromptTemplate`] into a single
//! user message and hands it to a [`GeneratorBackend`]. Two backends ship here: a
//! scripted one that replays canned responses, and an HTTP one speaking a
//! chat-completions JSON protocol.

mod http;
mod scripted;
mod template;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{ApiKey, HttpBackend, HttpBackendConfig};
pub use scripted::{KeyedScriptedBackend, ScriptedBackend, ScriptedReply};
pub use template::{render_prompt, PromptTemplate, TemplateError, TemplateId, TemplateSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub template_id: TemplateId,
    pub bindings: BTreeMap<String, String>,
    /// The rendered prompt sent as the single user message.
    pub prompt: String,
    pub max_output_tokens: u32,
    pub temperature: f32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub output_tokens: u32,
}

impl Usage {
    /// Whitespace word counts, for backends that do not report usage.
    pub fn estimate(prompt: &str, output: &str) -> Self {
        let count = |s: &str| u32::try_from(s.split_whitespace().count()).unwrap_or(u32::MAX);
        Self {
            prompt_tokens: count(prompt),
            output_tokens: count(output),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub usage: Usage,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendError {
    #[error("backend unavailable: {message}")]
    Unavailable { message: String },
    #[error("backend rejected the request (status {status:?}): {body}")]
    Rejected { status: Option<u16>, body: String },
    #[error("backend timed out")]
    Timeout,
}

impl BackendError {
    pub fn unavailable(message: impl Into<String>) -> Self {
        BackendError::Unavailable {
            message: message.into(),
        }
    }
}

/// Anything that turns a prompt into text. Implementations must be shareable across
/// sessions; a single session calls them strictly sequentially.
pub trait GeneratorBackend: Send + Sync {
    fn id(&self) -> &str;

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError>;
}

impl<B: GeneratorBackend + ?Sized> GeneratorBackend for std::sync::Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        (**self).complete(request)
    }
}

pub fn complete(backend: &dyn GeneratorBackend, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
    backend.complete(request)
}

/// Sampling settings per step: prose steps run warm, structural steps run at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub creative_temperature: f32,
    pub structural_temperature: f32,
    pub scene_max_tokens: u32,
    pub structural_max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            creative_temperature: 0.8,
            structural_temperature: 0.0,
            scene_max_tokens: 1024,
            structural_max_tokens: 512,
        }
    }
}

impl GenerationParams {
    fn is_creative(id: TemplateId) -> bool {
        matches!(id, TemplateId::GenerateScene | TemplateId::Regenerate)
    }

    pub fn temperature(&self, id: TemplateId) -> f32 {
        if Self::is_creative(id) {
            self.creative_temperature
        } else {
            self.structural_temperature
        }
    }

    pub fn max_tokens(&self, id: TemplateId) -> u32 {
        if Self::is_creative(id) {
            self.scene_max_tokens
        } else {
            self.structural_max_tokens
        }
        .max(1)
    }

    /// Render `id` with `bindings` into a ready request.
    pub fn request(
        &self,
        templates: &TemplateSet,
        id: TemplateId,
        bindings: BTreeMap<String, String>,
    ) -> Result<GenerationRequest, TemplateError> {
        let prompt = templates.render(id, &bindings)?;
        Ok(GenerationRequest {
            template_id: id,
            bindings,
            prompt,
            max_output_tokens: self.max_tokens(id),
            temperature: self.temperature(id).clamp(0.0, 2.0),
        })
    }
}
