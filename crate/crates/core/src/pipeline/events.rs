use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PipelineState, StorySpec};
use crate::kg::EditSet;
use crate::textgen::{BackendError, TemplateId, Usage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CallOutcome {
    Ok { text: String },
    Failed { error: BackendError },
}

/// One generator round trip, with enough recorded to replay it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorCall {
    pub template_id: TemplateId,
    /// Hex SHA-256 of the rendered prompt.
    pub prompt_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
    pub outcome: CallOutcome,
}

/// Session log record body.
///
/// Generator calls and cleanup notes are followed by exactly one command record
/// (`Initialized`, `SceneGenerated`, `EditApplied`, `Regenerated`, `Advanced`) that
/// closes the transaction and carries the resulting state hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Event {
    SpecCreated { spec: StorySpec },
    GeneratorCall(GeneratorCall),
    CleanupRan { removed: usize, remaining: usize },
    Initialized { state_hash: String },
    SceneGenerated { index: u32, generation: u32, state_hash: String },
    EditApplied { edits: EditSet, state_hash: String },
    Regenerated { index: u32, generation: u32, state_hash: String },
    Advanced { from: u32, state_hash: String },
}

impl Event {
    pub fn is_command(&self) -> bool {
        self.state_hash().is_some()
    }

    pub fn state_hash(&self) -> Option<&str> {
        match self {
            Event::Initialized { state_hash }
            | Event::SceneGenerated { state_hash, .. }
            | Event::EditApplied { state_hash, .. }
            | Event::Regenerated { state_hash, .. }
            | Event::Advanced { state_hash, .. } => Some(state_hash),
            _ => None,
        }
    }
}

/// One line of a session's JSON-lines log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of the state's JSON serialization.
pub fn state_hash(state: &PipelineState) -> String {
    let bytes = serde_json::to_vec(state).expect("pipeline state always serializes");
    sha256_hex(&bytes)
}
